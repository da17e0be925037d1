//! The trajectory network.
//!
//! Goal-scoring variants (one per DCM feature set) run, per scene:
//!
//! 1. a shared embedding + LSTM encoder over the target and the neighbors that
//!    hold a social-tensor cell, batched as columns;
//! 2. `K + L` attention heads queried by the target state over the occupied
//!    cells (keys and values see the neighbor state and its cell position);
//! 3. goal scores `s_k = u_k + z_k` with `u = X β` and a scalar head
//!    `z_k = w_k · [h_T; A_k] + b_k` per alternative;
//! 4. an LSTM decoder over the `L` best-scored goals, batched as columns, each
//!    fed `[h_T; A_{K+l}; embed(goal_l)]` and emitting one bivariate Gaussian
//!    per future step, plus a softmax over modes.
//!
//! The LSTM baseline keeps only the target encoder and decodes `L` learned mode
//! embeddings instead of goals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use waydcm_core::choice::{goal_probabilities, top_n};
use waydcm_core::{
    BetaVector, FeatureSet, GoalDistribution, InteractionSpace, Point2, PreparedScene, Scaler, Variant,
    NUM_FEATURES,
};

use crate::mixture::{Gaussian2, MixtureTrajectory};
use crate::social::SocialGrid;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Scale of positions fed to the network, meters per unit.
pub const POSITION_SCALE: f64 = 10.0;
/// Scale of speeds fed to the network, m/s per unit.
pub const SPEED_SCALE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub enc_hidden: usize,
    pub att_dim: usize,
    pub dec_hidden: usize,
    pub goal_embed: usize,
    /// Number of decoded modes `L`.
    pub num_modes: usize,
    pub social: SocialGrid,
    /// Decode each goal mode as a residual around the straight line from the
    /// target to its goal center.
    pub anchor_to_goal: bool,
    /// Residual scale as a fraction of the grid size.
    pub residual_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            enc_hidden: 32,
            att_dim: 32,
            dec_hidden: 32,
            goal_embed: 16,
            num_modes: 6,
            social: SocialGrid::default(),
            anchor_to_goal: true,
            residual_scale: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self, num_alternatives: usize) -> Result<(), String> {
        let dims = [
            self.embed_dim,
            self.enc_hidden,
            self.att_dim,
            self.dec_hidden,
            self.goal_embed,
            self.num_modes,
            self.social.longitudinal,
            self.social.lateral,
        ];
        if dims.contains(&0) {
            return Err("model sizes must all be at least 1".into());
        }
        if self.num_modes > num_alternatives {
            return Err(format!(
                "model.num_modes = {} exceeds the {num_alternatives} grid alternatives",
                self.num_modes
            ));
        }
        if !(self.residual_scale.is_finite() && self.residual_scale > 0.0) {
            return Err("model.residual_scale must be positive".into());
        }
        Ok(())
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub values: Vec<Tensor>,
}

impl ParamStore {
    fn add(&mut self, name: &str, value: Tensor) -> usize {
        self.names.push(name.to_string());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.values.iter().map(|v| Tensor::zeros(v.rows, v.cols)).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Tensor::is_finite)
    }
}

/// Parameter-group label used for audits and gradient checks: the prefix of the
/// parameter name before the first dot.
pub fn param_group(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LstmIds {
    wx: usize,
    wh: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct GoalIds {
    att_q: usize,
    att_k: usize,
    att_v: usize,
    z_wa: usize,
    z_wh: usize,
    z_b: usize,
    beta: usize,
    goal_w: usize,
    goal_b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ids {
    emb_w: usize,
    emb_b: usize,
    enc: LstmIds,
    dec: LstmIds,
    out_w: usize,
    out_b: usize,
    mode_w: usize,
    goal: Option<GoalIds>,
    mode_emb: Option<usize>,
}

/// Per-agent input features per observed step.
const AGENT_INPUT: usize = 5;

/// Network inputs of one scene, all in the target frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneInput {
    /// One `5 × n` matrix per observed step; column 0 is the target, the
    /// others are the neighbors holding a social cell, in cell order.
    pub steps: Vec<Tensor>,
    /// Cell centers of the encoded neighbors, in column order after the target.
    pub cell_centers: Vec<Point2>,
    /// Scaled goal features (`K × 5`), columns outside the variant's set zeroed.
    pub features: Tensor,
    pub centers: Vec<Point2>,
    pub maxl: f64,
    pub future: Option<Vec<Point2>>,
    pub label: Option<usize>,
}

impl SceneInput {
    pub fn new(
        scene: &PreparedScene,
        scaler: &Scaler,
        features: Option<FeatureSet>,
        space: &InteractionSpace,
        social: &SocialGrid,
    ) -> Self {
        let s = scene.scene();
        let positions: Vec<Point2> = s.neighbors.iter().map(|n| n.last().position()).collect();
        let cells = social.occupy(space, &positions);
        let mut tracks = vec![&s.target];
        tracks.extend(cells.iter().map(|c| &s.neighbors[c.neighbor]));
        let steps = (0..s.t_obs)
            .map(|t| {
                let mut m = Tensor::zeros(AGENT_INPUT, tracks.len());
                for (j, track) in tracks.iter().enumerate() {
                    let st = track.states[t];
                    let row = [
                        st.x / POSITION_SCALE,
                        st.y / POSITION_SCALE,
                        st.v / SPEED_SCALE,
                        st.theta.cos(),
                        st.theta.sin(),
                    ];
                    for (r, v) in row.into_iter().enumerate() {
                        *m.at_mut(r, j) = v;
                    }
                }
                m
            })
            .collect();

        let k = scene.raw.len();
        let mut feat = Tensor::zeros(k, NUM_FEATURES);
        if let Some(set) = features {
            for (i, row) in scaler.scale_table(&scene.raw).iter().enumerate() {
                for c in 0..NUM_FEATURES {
                    if set.0[c] {
                        *feat.at_mut(i, c) = row.0[c];
                    }
                }
            }
        }
        Self {
            steps,
            cell_centers: cells.iter().map(|c| c.center).collect(),
            features: feat,
            centers: scene.grid.alternatives.iter().map(|a| a.center).collect(),
            maxl: scene.grid.maxl,
            future: s.future.clone(),
            label: scene.label,
        }
    }

    pub fn num_agents(&self) -> usize {
        self.steps.first().map_or(0, |m| m.cols)
    }
}

/// Result of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `K × 1` log goal probabilities (goal variants only).
    pub goal_log_probs: Option<Var>,
    pub utilities: Vec<f64>,
    pub neural_scores: Vec<f64>,
    /// Goal decoded by each mode (goal variants only).
    pub selected: Vec<usize>,
    /// `1 × L` log mode probabilities.
    pub mode_log_probs: Var,
    /// `5·t_f × L` raw decoder outputs.
    pub raw: Var,
    pub anchors: Vec<Point2>,
    pub scales: Vec<f64>,
    /// `heads × d` attention contexts, absent when no cell is occupied.
    pub attention: Option<Var>,
}

/// Loss nodes of one scene.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub l_reg: Var,
    pub l_score: Var,
    pub l_cls: Option<Var>,
    pub total: Var,
    /// Mode that won the regression term.
    pub reg_mode: usize,
    /// Mode with the smallest final displacement, target of the mode score.
    pub best_mode: usize,
}

/// Weights of the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub reg: f64,
    pub score: f64,
    pub cls: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            reg: 1.0,
            score: 1.0,
            cls: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub variant: Variant,
    pub config: ModelConfig,
    pub num_alternatives: usize,
    pub t_f: usize,
    pub params: ParamStore,
    ids: Ids,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-a..a)).collect())
}

fn lstm_bias(hidden: usize) -> Tensor {
    let mut b = Tensor::zeros(4 * hidden, 1);
    b.data[hidden..2 * hidden].fill(1.0);
    b
}

impl Model {
    pub fn new(variant: Variant, config: ModelConfig, num_alternatives: usize, t_f: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config;
        let k = num_alternatives;
        let l = c.num_modes;
        let mut p = ParamStore::default();
        let emb_w = p.add("encoder.embed_w", xavier(&mut rng, c.embed_dim, AGENT_INPUT));
        let emb_b = p.add("encoder.embed_b", Tensor::zeros(c.embed_dim, 1));
        let enc = LstmIds {
            wx: p.add("encoder.lstm_wx", xavier(&mut rng, 4 * c.enc_hidden, c.embed_dim)),
            wh: p.add("encoder.lstm_wh", xavier(&mut rng, 4 * c.enc_hidden, c.enc_hidden)),
            b: p.add("encoder.lstm_b", lstm_bias(c.enc_hidden)),
        };

        let (goal, mode_emb, dec_in) = match variant.feature_set() {
            Some(_) => {
                let heads = k + l;
                let key_in = c.enc_hidden + 2;
                let g = GoalIds {
                    att_q: p.add("attention.query_w", xavier(&mut rng, heads * c.att_dim, c.enc_hidden)),
                    att_k: p.add("attention.key_w", xavier(&mut rng, heads * c.att_dim, key_in)),
                    att_v: p.add("attention.value_w", xavier(&mut rng, heads * c.att_dim, key_in)),
                    z_wa: p.add("zhead.context_w", xavier(&mut rng, k, c.att_dim)),
                    z_wh: p.add("zhead.state_w", xavier(&mut rng, k, c.enc_hidden)),
                    z_b: p.add("zhead.b", Tensor::zeros(k, 1)),
                    beta: p.add("beta", Tensor::zeros(NUM_FEATURES, 1)),
                    goal_w: p.add("decoder.goal_w", xavier(&mut rng, c.goal_embed, 2)),
                    goal_b: p.add("decoder.goal_b", Tensor::zeros(c.goal_embed, 1)),
                };
                (Some(g), None, c.enc_hidden + c.att_dim + c.goal_embed)
            }
            None => {
                let m = p.add("decoder.mode_embed", xavier(&mut rng, c.goal_embed, l));
                (None, Some(m), c.enc_hidden + c.goal_embed)
            }
        };
        let dec = LstmIds {
            wx: p.add("decoder.lstm_wx", xavier(&mut rng, 4 * c.dec_hidden, dec_in)),
            wh: p.add("decoder.lstm_wh", xavier(&mut rng, 4 * c.dec_hidden, c.dec_hidden)),
            b: p.add("decoder.lstm_b", lstm_bias(c.dec_hidden)),
        };
        let out_w = p.add("decoder.out_w", xavier(&mut rng, 5, c.dec_hidden));
        let out_b = p.add("decoder.out_b", Tensor::zeros(5, 1));
        let mode_w = p.add("decoder.mode_w", xavier(&mut rng, 1, dec_in));
        Self {
            variant,
            config,
            num_alternatives: k,
            t_f,
            params: p,
            ids: Ids {
                emb_w,
                emb_b,
                enc,
                dec,
                out_w,
                out_b,
                mode_w,
                goal,
                mode_emb,
            },
        }
    }

    pub fn feature_set(&self) -> Option<FeatureSet> {
        self.variant.feature_set()
    }

    /// Current β (zero for the baseline).
    pub fn beta(&self) -> BetaVector {
        match self.ids.goal {
            Some(g) => {
                let b = &self.params.values[g.beta].data;
                BetaVector::from_array(std::array::from_fn(|i| b[i]))
            }
            None => BetaVector::default(),
        }
    }

    /// Sets β, keeping columns outside the variant's feature set at zero.
    pub fn set_beta(&mut self, beta: &BetaVector) {
        if let (Some(g), Some(set)) = (self.ids.goal, self.feature_set()) {
            let b = beta.restricted(set).to_array();
            self.params.values[g.beta].data.copy_from_slice(&b);
        }
    }

    /// Replaces the parameter values, checking names and shapes.
    pub fn load_params(&mut self, names: &[String], values: Vec<Tensor>) -> Result<(), String> {
        if names.len() != self.params.names.len() {
            return Err(format!(
                "expected {} parameters, found {}",
                self.params.names.len(),
                names.len()
            ));
        }
        for ((want, have), (cur, new)) in self
            .params
            .names
            .iter()
            .zip(names)
            .zip(self.params.values.iter().zip(&values))
        {
            if want != have {
                return Err(format!("parameter {want}: found {have} in its place"));
            }
            if cur.shape() != new.shape() {
                return Err(format!(
                    "parameter {want}: expected shape {:?}, found {:?}",
                    cur.shape(),
                    new.shape()
                ));
            }
        }
        self.params.values = values;
        Ok(())
    }

    fn lstm_step(&self, tape: &mut Tape, p: &[Var], ids: LstmIds, pre: Var, state: Option<(Var, Var)>, hidden: usize) -> (Var, Var) {
        let (gates, c) = match state {
            Some((h, c)) => {
                let rec = tape.matmul(p[ids.wh], h);
                (tape.add(pre, rec), c)
            }
            None => {
                let n = tape.value(pre).cols;
                (pre, tape.constant(Tensor::zeros(hidden, n)))
            }
        };
        let hc = tape.lstm_cell(gates, c);
        (tape.slice_rows(hc, 0, hidden), tape.slice_rows(hc, hidden, hidden))
    }

    /// Runs the network on one scene.
    ///
    /// With `force_goal`, that alternative replaces the last decoded goal when
    /// it is not already among the top `L`.
    pub fn forward(&self, tape: &mut Tape, input: &SceneInput, force_goal: Option<usize>) -> Forward {
        let c = &self.config;
        let ids = self.ids;
        let l = c.num_modes;
        let k = self.num_alternatives;
        let p: Vec<Var> = self
            .params
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| tape.param(i, v))
            .collect();

        // Encoder over all agents, or the target alone for the baseline.
        let agents = if ids.goal.is_some() { input.num_agents() } else { 1 };
        let mut state = None;
        for step in &input.steps {
            let x = if agents == step.cols {
                step.clone()
            } else {
                Tensor::from_vec(AGENT_INPUT, 1, (0..AGENT_INPUT).map(|r| step.at(r, 0)).collect())
            };
            let x = tape.constant(x);
            let e = tape.linear(p[ids.emb_w], x, Some(p[ids.emb_b]));
            let e = tape.tanh(e);
            let pre = tape.linear(p[ids.enc.wx], e, Some(p[ids.enc.b]));
            state = Some(self.lstm_step(tape, &p, ids.enc, pre, state, c.enc_hidden));
        }
        let (h_all, _) = state.expect("scene has at least one observed step");
        let h_t = if agents == 1 { h_all } else { tape.gather_cols(h_all, &[0]) };

        let mut goal_log_probs = None;
        let mut utilities = Vec::new();
        let mut neural_scores = Vec::new();
        let mut selected = Vec::new();
        let mut attention = None;
        let dec_input;
        let mut anchors = vec![Point2::ORIGIN; self.t_f * l];
        let mut scales = vec![input.maxl; l];

        if let Some(g) = ids.goal {
            let heads = k + l;
            let context = if agents > 1 {
                let cols: Vec<usize> = (1..agents).collect();
                let h_n = tape.gather_cols(h_all, &cols);
                let mut pos = Tensor::zeros(2, agents - 1);
                for (j, cc) in input.cell_centers.iter().enumerate() {
                    *pos.at_mut(0, j) = cc.x / POSITION_SCALE;
                    *pos.at_mut(1, j) = cc.y / POSITION_SCALE;
                }
                let pos = tape.constant(pos);
                let items = tape.concat_rows(&[h_n, pos]);
                let q = tape.matmul(p[g.att_q], h_t);
                let kk = tape.matmul(p[g.att_k], items);
                let vv = tape.matmul(p[g.att_v], items);
                let a = tape.attention(q, kk, vv, heads);
                attention = Some(a);
                a
            } else {
                tape.constant(Tensor::zeros(heads, c.att_dim))
            };
            let a_goal = tape.slice_rows(context, 0, k);
            let a_traj = tape.slice_rows(context, k, l);

            let za = tape.mul(p[g.z_wa], a_goal);
            let za = tape.row_sum(za);
            let zh = tape.linear(p[g.z_wh], h_t, Some(p[g.z_b]));
            let z = tape.add(za, zh);
            let x = tape.constant(input.features.clone());
            let u = tape.matmul(x, p[g.beta]);
            let s = tape.add(u, z);
            goal_log_probs = Some(tape.log_softmax(s));
            utilities = tape.value(u).data.clone();
            neural_scores = tape.value(z).data.clone();

            selected = top_n(&tape.value(s).data, l);
            if let Some(kf) = force_goal {
                if !selected.contains(&kf) {
                    selected[l - 1] = kf;
                }
            }
            let mut centers = Tensor::zeros(2, l);
            for (j, &goal) in selected.iter().enumerate() {
                *centers.at_mut(0, j) = input.centers[goal].x / input.maxl;
                *centers.at_mut(1, j) = input.centers[goal].y / input.maxl;
            }
            let centers = tape.constant(centers);
            let emb = tape.linear(p[g.goal_w], centers, Some(p[g.goal_b]));
            let emb = tape.tanh(emb);
            let h_rep = tape.repeat_cols(h_t, l);
            let a_cols = tape.transpose(a_traj);
            dec_input = tape.concat_rows(&[h_rep, a_cols, emb]);

            if c.anchor_to_goal {
                for (j, &goal) in selected.iter().enumerate() {
                    for t in 0..self.t_f {
                        anchors[t * l + j] = input.centers[goal] * ((t + 1) as f64 / self.t_f as f64);
                    }
                    scales[j] = c.residual_scale * input.maxl;
                }
            }
        } else {
            let h_rep = tape.repeat_cols(h_t, l);
            let m = p[ids.mode_emb.expect("baseline has mode embeddings")];
            dec_input = tape.concat_rows(&[h_rep, m]);
        }

        // A shared bias would cancel in the softmax over modes.
        let logits = tape.matmul(p[ids.mode_w], dec_input);
        let mode_log_probs = tape.log_softmax(logits);

        let pre = tape.linear(p[ids.dec.wx], dec_input, Some(p[ids.dec.b]));
        let mut state = None;
        let mut outputs = Vec::with_capacity(self.t_f);
        for _ in 0..self.t_f {
            let (h, cc) = self.lstm_step(tape, &p, ids.dec, pre, state, c.dec_hidden);
            state = Some((h, cc));
            outputs.push(tape.linear(p[ids.out_w], h, Some(p[ids.out_b])));
        }
        let raw = tape.concat_rows(&outputs);

        Forward {
            goal_log_probs,
            utilities,
            neural_scores,
            selected,
            mode_log_probs,
            raw,
            anchors,
            scales,
            attention,
        }
    }

    /// Mixture described by a forward pass.
    pub fn mixture(&self, tape: &Tape, fwd: &Forward) -> MixtureTrajectory {
        let raw = tape.value(fwd.raw);
        let l = raw.cols;
        let modes = (0..l)
            .map(|m| {
                (0..self.t_f)
                    .map(|t| {
                        let r = std::array::from_fn(|i| raw.at(5 * t + i, m));
                        Gaussian2::from_raw(r, fwd.anchors[t * l + m], fwd.scales[m])
                    })
                    .collect()
            })
            .collect();
        let probs = tape.value(fwd.mode_log_probs).data.iter().map(|v| v.exp()).collect();
        MixtureTrajectory { modes, probs }
    }

    /// Goal distribution of a forward pass through the choice model's
    /// `softmax(u + z)`.
    pub fn goal_distribution(&self, fwd: &Forward) -> Option<GoalDistribution> {
        fwd.goal_log_probs?;
        goal_probabilities(&fwd.utilities, Some(&fwd.neural_scores)).ok()
    }

    /// The three loss terms and their weighted sum for one scene with a known
    /// future and label.
    pub fn losses(&self, tape: &mut Tape, fwd: &Forward, input: &SceneInput, weights: &LossWeights) -> LossVars {
        let future = input.future.as_ref().expect("loss needs the future trajectory");
        let nll = tape.mixture_nll(fwd.raw, fwd.anchors.clone(), fwd.scales.clone(), future.clone());
        let reg_mode = argmin(&tape.value(nll).data);
        let l_reg = tape.pick(nll, reg_mode);

        let mixture = self.mixture(tape, fwd);
        let end = *future.last().expect("non-empty future");
        let fde: Vec<f64> = mixture
            .modes
            .iter()
            .map(|m| m.last().expect("t_f ≥ 1").mu.distance(end))
            .collect();
        let best_mode = argmin(&fde);
        let lp = tape.pick(fwd.mode_log_probs, best_mode);
        let l_score = tape.scale(lp, -1.0);

        let l_cls = fwd.goal_log_probs.map(|g| {
            let label = input.label.expect("loss needs the goal label");
            let lp = tape.pick(g, label);
            tape.scale(lp, -1.0)
        });

        let weighted = |tape: &mut Tape, v: Var, w: f64| if w == 1.0 { v } else { tape.scale(v, w) };
        let a = weighted(tape, l_reg, weights.reg);
        let b = weighted(tape, l_score, weights.score);
        let mut total = tape.add(a, b);
        if let Some(cls) = l_cls {
            let c = weighted(tape, cls, weights.cls);
            total = tape.add(total, c);
        }
        LossVars {
            l_reg,
            l_score,
            l_cls,
            total,
            reg_mode,
            best_mode,
        }
    }
}

/// Index of the smallest value; ties to the lowest index.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}
