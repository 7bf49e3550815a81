//! Classifier head over encoder features: positionwise sigmoid weighting,
//! a two-direction recurrent layer, pooling to a sentence vector, a relu
//! fully connected layer, and a two-way softmax.
//!
//! Weight matrices are stored in column-vector orientation (output rows,
//! input columns) and transposed on the tape when applied to row-major
//! activations.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

/// Recurrent cell used by both directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellMode {
    /// Gated cell: i, f, o = sigmoid, g = tanh, c = f∘c + i∘g, h = o∘tanh(c).
    Lstm,
    /// Plain recurrence h = tanh(W·a + U·h_prev + b); no cell state.
    SimpleTanh,
}

/// How per-position states become the sentence vector H.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    /// Concatenate h_1 … h_max_len (padded slots contribute zeros).
    ConcatAll,
    /// Concatenate the last unmasked forward state and the first backward state.
    FinalStates,
    /// Mask-weighted mean of the merged states.
    Mean,
}

/// How the two directions combine into h_i.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Merge {
    Sum,
    Concat,
}

macro_rules! enum_strings {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    _ => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " '{}'"), s
                    ))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let s = match self { $($ty::$variant => $name,)+ };
                f.write_str(s)
            }
        }
    };
}

enum_strings!(CellMode { Lstm => "lstm", SimpleTanh => "simple_tanh" });
enum_strings!(Pooling { ConcatAll => "concat_all", FinalStates => "final_states", Mean => "mean" });
enum_strings!(Merge { Sum => "sum", Concat => "concat" });

#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    pub d_a: usize,
    pub d_h: usize,
    pub d_fc: usize,
    pub cell_mode: CellMode,
    pub pooling: Pooling,
    pub merge: Merge,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            d_a: 64,
            d_h: 64,
            d_fc: 64,
            cell_mode: CellMode::Lstm,
            pooling: Pooling::ConcatAll,
            merge: Merge::Sum,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_a == 0 || self.d_h == 0 || self.d_fc == 0 {
            return Err(Error::Config("head dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Width of one merged state h_i.
    pub fn merged_dim(&self) -> usize {
        match self.merge {
            Merge::Sum => self.d_h,
            Merge::Concat => 2 * self.d_h,
        }
    }

    /// Width of the pooled sentence vector H.
    pub fn pooled_dim(&self, max_len: usize) -> usize {
        match self.pooling {
            Pooling::ConcatAll => max_len * self.merged_dim(),
            Pooling::FinalStates => 2 * self.d_h,
            Pooling::Mean => self.merged_dim(),
        }
    }

    /// Rows of a direction's input/recurrent matrices (four gate blocks for
    /// the gated cell).
    fn gate_rows(&self) -> usize {
        match self.cell_mode {
            CellMode::Lstm => 4 * self.d_h,
            CellMode::SimpleTanh => self.d_h,
        }
    }
}

/// One direction's weights: input projection `w`, recurrent projection `u`,
/// bias `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionParams {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub wa: Tensor,
    pub ba: Tensor,
    pub fwd: DirectionParams,
    pub bwd: DirectionParams,
    pub w_fc: Tensor,
    pub b_fc: Tensor,
    pub w_s: Tensor,
    pub b_s: Tensor,
}

// fan-in scaled weights; a flat small std here stacks four attenuating
// affine maps and buries the class signal below batch noise at small dims
fn fan_in_weight(shape: Vec<usize>, fan_in: usize, rng: &mut Rng) -> Tensor {
    let std = 1.0 / (fan_in as f64).sqrt();
    Tensor::randn(shape, 0.0, std, rng).with_grad()
}

fn zero_bias(len: usize) -> Tensor {
    Tensor::zeros(vec![len]).with_grad()
}

impl HeadParams {
    /// Fresh weights for a head reading `d_model`-wide features over
    /// sequences of `max_len` positions.
    pub fn init(
        config: &HeadConfig,
        d_model: usize,
        max_len: usize,
        rng: &mut Rng,
    ) -> Result<HeadParams> {
        config.validate()?;
        let rows = config.gate_rows();
        let direction = |rng: &mut Rng| DirectionParams {
            w: fan_in_weight(vec![rows, config.d_a], config.d_a, rng),
            u: fan_in_weight(vec![rows, config.d_h], config.d_h, rng),
            b: zero_bias(rows),
        };
        Ok(HeadParams {
            wa: fan_in_weight(vec![config.d_a, d_model], d_model, rng),
            ba: zero_bias(config.d_a),
            fwd: direction(rng),
            bwd: direction(rng),
            w_fc: fan_in_weight(
                vec![config.d_fc, config.pooled_dim(max_len)],
                config.pooled_dim(max_len),
                rng,
            ),
            b_fc: zero_bias(config.d_fc),
            w_s: fan_in_weight(vec![2, config.d_fc], config.d_fc, rng),
            b_s: zero_bias(2),
        })
    }

    /// All-zero weights with [`HeadParams::init`]'s shapes; a skeleton for
    /// loading checkpoints into.
    pub fn zeros(config: &HeadConfig, d_model: usize, max_len: usize) -> Result<HeadParams> {
        config.validate()?;
        let rows = config.gate_rows();
        let zt = |shape: Vec<usize>| Tensor::zeros(shape).with_grad();
        let direction = || DirectionParams {
            w: zt(vec![rows, config.d_a]),
            u: zt(vec![rows, config.d_h]),
            b: zt(vec![rows]),
        };
        Ok(HeadParams {
            wa: zt(vec![config.d_a, d_model]),
            ba: zt(vec![config.d_a]),
            fwd: direction(),
            bwd: direction(),
            w_fc: zt(vec![config.d_fc, config.pooled_dim(max_len)]),
            b_fc: zt(vec![config.d_fc]),
            w_s: zt(vec![2, config.d_fc]),
            b_s: zt(vec![2]),
        })
    }

    /// Canonical (name, tensor) listing, mirroring
    /// [`crate::encoder::EncoderParams::named`].
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("head.wa".into(), &self.wa),
            ("head.ba".into(), &self.ba),
            ("head.fwd.w".into(), &self.fwd.w),
            ("head.fwd.u".into(), &self.fwd.u),
            ("head.fwd.b".into(), &self.fwd.b),
            ("head.bwd.w".into(), &self.bwd.w),
            ("head.bwd.u".into(), &self.bwd.u),
            ("head.bwd.b".into(), &self.bwd.b),
            ("head.fc.w".into(), &self.w_fc),
            ("head.fc.b".into(), &self.b_fc),
            ("head.out.w".into(), &self.w_s),
            ("head.out.b".into(), &self.b_s),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("head.wa".into(), &mut self.wa),
            ("head.ba".into(), &mut self.ba),
            ("head.fwd.w".into(), &mut self.fwd.w),
            ("head.fwd.u".into(), &mut self.fwd.u),
            ("head.fwd.b".into(), &mut self.fwd.b),
            ("head.bwd.w".into(), &mut self.bwd.w),
            ("head.bwd.u".into(), &mut self.bwd.u),
            ("head.bwd.b".into(), &mut self.bwd.b),
            ("head.fc.w".into(), &mut self.w_fc),
            ("head.fc.b".into(), &mut self.b_fc),
            ("head.out.w".into(), &mut self.w_s),
            ("head.out.b".into(), &mut self.b_s),
        ]
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundHead {
        let vars: Vec<Var> = self.named().iter().map(|(_, t)| tape.leaf(t)).collect();
        BoundHead::from_vars(&vars)
    }

    pub fn write_grads(&mut self, tape: &Tape, bound: &BoundHead) {
        let vars = bound.vars();
        for ((_, t), v) in self.named_mut().into_iter().zip(vars) {
            if let Some(g) = tape.grad(v) {
                t.accumulate_grad(g);
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundDirection {
    pub w: Var,
    pub u: Var,
    pub b: Var,
}

#[derive(Debug, Clone)]
pub struct BoundHead {
    pub wa: Var,
    pub ba: Var,
    pub fwd: BoundDirection,
    pub bwd: BoundDirection,
    pub w_fc: Var,
    pub b_fc: Var,
    pub w_s: Var,
    pub b_s: Var,
}

impl BoundHead {
    pub fn from_vars(vars: &[Var]) -> BoundHead {
        assert_eq!(vars.len(), 12, "head var count mismatch");
        BoundHead {
            wa: vars[0],
            ba: vars[1],
            fwd: BoundDirection {
                w: vars[2],
                u: vars[3],
                b: vars[4],
            },
            bwd: BoundDirection {
                w: vars[5],
                u: vars[6],
                b: vars[7],
            },
            w_fc: vars[8],
            b_fc: vars[9],
            w_s: vars[10],
            b_s: vars[11],
        }
    }

    pub fn vars(&self) -> Vec<Var> {
        vec![
            self.wa, self.ba, self.fwd.w, self.fwd.u, self.fwd.b, self.bwd.w, self.bwd.u,
            self.bwd.b, self.w_fc, self.b_fc, self.w_s, self.b_s,
        ]
    }
}

// ───────────────────────────────────────────────────────────────────────────
// Forward pieces
// ───────────────────────────────────────────────────────────────────────────

/// a_i = sigmoid(W_a · C_i + b_a), applied positionwise with shared weights.
pub fn weight_features(tape: &mut Tape, c: Var, wa: Var, ba: Var) -> Result<Var> {
    let wat = tape.transpose(wa)?;
    let z = tape.matmul(c, wat)?;
    let z = tape.add_bias(z, ba)?;
    Ok(tape.sigmoid(z))
}

/// Recurrent state: hidden vector plus the gated cell's memory (carried but
/// untouched in plain-tanh mode).
#[derive(Debug, Clone, Copy)]
pub struct CellState {
    pub h: Var,
    pub c: Var,
}

impl CellState {
    pub fn zero(tape: &mut Tape, d_h: usize) -> CellState {
        let h = tape.constant(vec![1, d_h], vec![0.0; d_h]);
        let c = tape.constant(vec![1, d_h], vec![0.0; d_h]);
        CellState { h, c }
    }
}

/// One recurrence step on a `[1, d_a]` input row.
pub fn cell_step(
    tape: &mut Tape,
    a_i: Var,
    prev: CellState,
    dir: &BoundDirection,
    mode: CellMode,
    d_h: usize,
) -> Result<CellState> {
    let wt = tape.transpose(dir.w)?;
    let ut = tape.transpose(dir.u)?;
    let wa = tape.matmul(a_i, wt)?;
    let uh = tape.matmul(prev.h, ut)?;
    let z = tape.add(wa, uh)?;
    let z = tape.add_bias(z, dir.b)?;
    match mode {
        CellMode::SimpleTanh => Ok(CellState {
            h: tape.tanh(z),
            c: prev.c,
        }),
        CellMode::Lstm => {
            let zi = tape.narrow(z, 1, 0, d_h)?;
            let zf = tape.narrow(z, 1, d_h, d_h)?;
            let zg = tape.narrow(z, 1, 2 * d_h, d_h)?;
            let zo = tape.narrow(z, 1, 3 * d_h, d_h)?;
            let i = tape.sigmoid(zi);
            let f = tape.sigmoid(zf);
            let g = tape.tanh(zg);
            let o = tape.sigmoid(zo);
            let fc = tape.mul(f, prev.c)?;
            let ig = tape.mul(i, g)?;
            let c = tape.add(fc, ig)?;
            let tc = tape.tanh(c);
            let h = tape.mul(o, tc)?;
            Ok(CellState { h, c })
        }
    }
}

/// Per-position states from both directions plus their merged form. Padded
/// positions hold zero vectors.
pub struct BilstmStates {
    pub forward: Vec<Var>,
    pub backward: Vec<Var>,
    pub merged: Vec<Var>,
}

/// Runs both recurrences over the unmasked positions (forward left→right,
/// backward right→left) from zero initial states. Masked positions neither
/// produce state nor advance it.
pub fn bilstm(
    tape: &mut Tape,
    a: Var,
    mask: &[u8],
    head: &BoundHead,
    config: &HeadConfig,
) -> Result<BilstmStates> {
    let n = tape.shape(a)[0];
    if mask.len() != n {
        return Err(Error::ShapeMismatch {
            op: "bilstm_mask",
            lhs: tape.shape(a).to_vec(),
            rhs: vec![mask.len()],
        });
    }
    let d_h = config.d_h;
    let zero_h = tape.constant(vec![1, d_h], vec![0.0; d_h]);

    let run = |tape: &mut Tape, dir: &BoundDirection, order: &[usize]| -> Result<Vec<Var>> {
        let mut states: Vec<Var> = vec![zero_h; n];
        let mut state = CellState::zero(tape, d_h);
        for &pos in order {
            if mask[pos] == 0 {
                continue;
            }
            let a_i = tape.narrow(a, 0, pos, 1)?;
            state = cell_step(tape, a_i, state, dir, config.cell_mode, d_h)?;
            states[pos] = state.h;
        }
        Ok(states)
    };

    let order_fwd: Vec<usize> = (0..n).collect();
    let order_bwd: Vec<usize> = (0..n).rev().collect();
    let forward = run(tape, &head.fwd, &order_fwd)?;
    let backward = run(tape, &head.bwd, &order_bwd)?;

    let mut merged = Vec::with_capacity(n);
    for pos in 0..n {
        let m = match config.merge {
            Merge::Sum => tape.add(forward[pos], backward[pos])?,
            Merge::Concat => tape.concat(&[forward[pos], backward[pos]], 1)?,
        };
        merged.push(m);
    }
    Ok(BilstmStates {
        forward,
        backward,
        merged,
    })
}

/// Pools per-position states into the sentence vector H.
pub fn pool(
    tape: &mut Tape,
    states: &BilstmStates,
    mask: &[u8],
    config: &HeadConfig,
) -> Result<Var> {
    let unmasked: Vec<usize> = (0..mask.len()).filter(|&i| mask[i] == 1).collect();
    if unmasked.is_empty() {
        return Err(Error::EmptyInput("unmasked positions"));
    }
    match config.pooling {
        Pooling::ConcatAll => tape.concat(&states.merged, 1),
        Pooling::FinalStates => {
            let last = *unmasked.last().unwrap();
            let first = unmasked[0];
            tape.concat(&[states.forward[last], states.backward[first]], 1)
        }
        Pooling::Mean => {
            let mut acc = states.merged[unmasked[0]];
            for &pos in &unmasked[1..] {
                acc = tape.add(acc, states.merged[pos])?;
            }
            Ok(tape.scale(acc, 1.0 / unmasked.len() as f64))
        }
    }
}

/// H_relu = relu(W_fc · H + b_fc).
pub fn fc_relu(tape: &mut Tape, h: Var, w_fc: Var, b_fc: Var) -> Result<Var> {
    let wt = tape.transpose(w_fc)?;
    let z = tape.matmul(h, wt)?;
    let z = tape.add_bias(z, b_fc)?;
    Ok(tape.relu(z))
}

/// p = softmax(W_s · H_relu + b_s); a `[1, 2]` distribution.
pub fn classify(tape: &mut Tape, h_relu: Var, w_s: Var, b_s: Var) -> Result<Var> {
    let wt = tape.transpose(w_s)?;
    let z = tape.matmul(h_relu, wt)?;
    let z = tape.add_bias(z, b_s)?;
    tape.softmax(z, 1)
}

/// Full head pipeline from encoder features to the class distribution.
pub fn head_forward(
    tape: &mut Tape,
    c: Var,
    mask: &[u8],
    head: &BoundHead,
    config: &HeadConfig,
) -> Result<Var> {
    let a = weight_features(tape, c, head.wa, head.ba)?;
    let states = bilstm(tape, a, mask, head, config)?;
    let h = pool(tape, &states, mask, config)?;
    let h_relu = fc_relu(tape, h, head.w_fc, head.b_fc)?;
    classify(tape, h_relu, head.w_s, head.b_s)
}
