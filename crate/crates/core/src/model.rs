//! The three networks: feature extractor (FE), primary grasp predictor
//! (PGP) and scorer, built from tape ops.
//!
//! Head channel layout: the regression head emits channel `a*5 + m` for
//! anchor slot `a` and component `m` in `(dx, dy, dw, dh, dtheta)`; the
//! score head emits channel `a*2 + j` with `j = 0` the graspable logit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::anchors::{build_anchor_grid, decode, AnchorGrid, Delta};
use crate::autodiff::{ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{GraspError, Result};
use crate::geometry::GraspRect;
use crate::matching::select_top_t;

pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    /// Output channels of each FE block. The first `log2(fe_stride_total)`
    /// blocks have stride 2, the rest stride 1.
    pub fe_channels: Vec<usize>,
    pub fe_stride_total: usize,
    pub k: usize,
    pub scorer_conv_filters: usize,
    pub scorer_fc_width: usize,
    pub anchor_w: f64,
    pub anchor_h: f64,
    /// Kernel size of the two PGP heads (odd).
    pub head_kernel: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// 64×64 inputs, three stride-2 blocks, 8×8 grid.
    pub fn desk() -> Self {
        Self {
            image_size: 64,
            fe_channels: vec![32, 64, 64],
            fe_stride_total: 8,
            k: 6,
            scorer_conv_filters: 32,
            scorer_fc_width: 128,
            anchor_w: 16.0,
            anchor_h: 8.0,
            head_kernel: 3,
            init_seed: 0,
        }
    }

    /// Full-size architecture: 320 input, 20×20×1024 features.
    pub fn full_scale() -> Self {
        Self {
            image_size: 320,
            fe_channels: vec![64, 256, 512, 1024],
            fe_stride_total: 16,
            k: 6,
            scorer_conv_filters: 1024,
            scorer_fc_width: 512,
            anchor_w: 91.0,
            anchor_h: 26.0,
            head_kernel: 1,
            init_seed: 0,
        }
    }

    /// 8×8 inputs, a single one-channel block, k = 2.
    pub fn tiny() -> Self {
        Self {
            image_size: 8,
            fe_channels: vec![1],
            fe_stride_total: 2,
            k: 2,
            scorer_conv_filters: 2,
            scorer_fc_width: 4,
            anchor_w: 4.0,
            anchor_h: 2.0,
            head_kernel: 1,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.fe_stride_total;
        if s == 0 || !s.is_power_of_two() {
            return Err(GraspError::Config(format!(
                "fe_stride_total {s} must be a power of two"
            )));
        }
        let downsamples = s.trailing_zeros() as usize;
        if downsamples > self.fe_channels.len() {
            return Err(GraspError::Config(format!(
                "fe_stride_total {s} needs at least {downsamples} FE blocks, got {}",
                self.fe_channels.len()
            )));
        }
        if self.fe_channels.contains(&0) || self.fe_channels.is_empty() {
            return Err(GraspError::Config("fe_channels must be non-empty and positive".into()));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(s) {
            return Err(GraspError::Config(format!(
                "image_size {} not divisible by fe_stride_total {s}",
                self.image_size
            )));
        }
        if self.k == 0 || self.scorer_conv_filters == 0 || self.scorer_fc_width == 0 {
            return Err(GraspError::Config("k and scorer widths must be at least 1".into()));
        }
        if self.head_kernel.is_multiple_of(2) {
            return Err(GraspError::Config("head_kernel must be odd".into()));
        }
        if !(self.anchor_w > 0.0 && self.anchor_h > 0.0) {
            return Err(GraspError::Config("anchor size must be positive".into()));
        }
        Ok(())
    }

    pub fn grid_size(&self) -> usize {
        self.image_size / self.fe_stride_total
    }

    pub fn feature_channels(&self) -> usize {
        *self.fe_channels.last().unwrap()
    }

    /// Length of the scorer's concatenated image + grasp vector.
    pub fn scorer_concat_len(&self) -> usize {
        9 * self.scorer_conv_filters + self.scorer_fc_width
    }

    fn block_stride(&self, i: usize) -> usize {
        if i < self.fe_stride_total.trailing_zeros() as usize {
            2
        } else {
            1
        }
    }
}

/// Which score ranks candidate grasps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    Primary,
    Scorer,
}

impl std::str::FromStr for ScoreMode {
    type Err = GraspError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "primary" => Ok(ScoreMode::Primary),
            "scorer" => Ok(ScoreMode::Scorer),
            _ => Err(GraspError::InvalidArgument(format!("unknown score mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct Layers {
    fe: Vec<Layer>,
    pgp_reg: Layer,
    pgp_cls: Layer,
    scorer_conv: Layer,
    scorer_delta_fc: Layer,
    scorer_fc1: Layer,
    scorer_fc2: Layer,
}

/// Parameters loaded onto one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    fn w(&self, l: Layer) -> (Var, Var) {
        (self.vars[l.weight.0], self.vars[l.bias.0])
    }
}

/// Per-anchor PGP outputs in `[row][col][a]` order.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMap {
    pub grid_h: usize,
    pub grid_w: usize,
    pub k: usize,
    /// `[grid_h][grid_w][k][5]`
    pub deltas: Vec<f64>,
    /// `[grid_h][grid_w][k][2]`, graspable logit first.
    pub primary_logits: Vec<f64>,
}

impl PredictionMap {
    pub fn len(&self) -> usize {
        self.grid_h * self.grid_w * self.k
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn delta(&self, linear: usize) -> Delta {
        Delta::from_slice(&self.deltas[linear * 5..linear * 5 + 5])
    }

    /// Softmax probability of the graspable class.
    pub fn primary_score(&self, linear: usize) -> f64 {
        let (g, n) = (self.primary_logits[2 * linear], self.primary_logits[2 * linear + 1]);
        1.0 / (1.0 + (n - g).exp())
    }

    pub fn primary_scores(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.primary_score(i)).collect()
    }
}

/// Tape handles produced by one FE + PGP forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub features: Var,
    /// `[1][5k][gh][gw]`
    pub deltas: Var,
    /// `[1][2k][gh][gw]`
    pub logits: Var,
    /// Graspable probability per anchor, `[gh*gw*k]` in linear order.
    pub primary_probs: Var,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub grid: AnchorGrid,
    layers: Layers,
}

fn kaiming(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| normal.sample(rng)).collect()).expect("init shape")
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let mut layer = |store: &mut ParamStore, name: &str, group, wshape: &[usize], fan_in| Layer {
            weight: store.register(format!("{name}.weight"), group, kaiming(&mut rng, wshape, fan_in)),
            bias: store.register(format!("{name}.bias"), group, Tensor::zeros(&[wshape[0]])),
        };
        let mut fe = Vec::new();
        let mut c_in = 3;
        for (i, &c) in config.fe_channels.iter().enumerate() {
            fe.push(layer(
                &mut store,
                &format!("fe.{i}"),
                ParamGroup::Fe,
                &[c, c_in, 3, 3],
                c_in * 9,
            ));
            c_in = c;
        }
        let (k, hk) = (config.k, config.head_kernel);
        let head_fan = c_in * hk * hk;
        let pgp_reg = layer(&mut store, "pgp.reg", ParamGroup::Pgp, &[5 * k, c_in, hk, hk], head_fan);
        let pgp_cls = layer(&mut store, "pgp.cls", ParamGroup::Pgp, &[2 * k, c_in, hk, hk], head_fan);
        let f = config.scorer_conv_filters;
        let fc = config.scorer_fc_width;
        let scorer_conv = layer(&mut store, "scorer.conv", ParamGroup::Scorer, &[f, c_in, 1, 1], c_in);
        let scorer_delta_fc = layer(&mut store, "scorer.delta_fc", ParamGroup::Scorer, &[fc, 5 * k], 5 * k);
        let concat = config.scorer_concat_len();
        let scorer_fc1 = layer(&mut store, "scorer.fc1", ParamGroup::Scorer, &[fc, concat], concat);
        let scorer_fc2 = layer(&mut store, "scorer.fc2", ParamGroup::Scorer, &[2, fc], fc);
        let grid = build_anchor_grid(
            config.image_size,
            config.fe_stride_total,
            config.anchor_w,
            config.anchor_h,
            config.k,
        )?;
        Ok(Self {
            config,
            params: store,
            grid,
            layers: Layers {
                fe,
                pgp_reg,
                pgp_cls,
                scorer_conv,
                scorer_delta_fc,
                scorer_fc1,
                scorer_fc2,
            },
        })
    }

    /// Replaces the parameter store, checking names, groups and shapes.
    pub fn load_params(&mut self, store: ParamStore) -> Result<()> {
        if store.len() != self.params.len() {
            return Err(GraspError::Checkpoint(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                store.len()
            )));
        }
        for ((_, a), (_, b)) in self.params.iter().zip(store.iter()) {
            if a.name != b.name || a.group != b.group || a.value.shape() != b.value.shape() {
                return Err(GraspError::Checkpoint(format!(
                    "parameter mismatch: {} {:?} {:?} vs {} {:?} {:?}",
                    a.name,
                    a.group,
                    a.value.shape(),
                    b.name,
                    b.group,
                    b.value.shape()
                )));
            }
        }
        self.params = store;
        Ok(())
    }

    pub fn num_candidates(&self) -> usize {
        self.grid.len()
    }

    /// Loads every parameter onto `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.params.iter().map(|(id, _)| tape.param(&self.params, id)).collect(),
        }
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let s = self.config.image_size;
        if image.shape() != [3, s, s] {
            return Err(GraspError::Shape {
                op: "model input",
                lhs: image.shape().to_vec(),
                rhs: vec![3, s, s],
            });
        }
        Ok(())
    }

    /// FE: `image [3][H][W]` → features `[1][C][H/s][W/s]`.
    pub fn fe_forward(&self, tape: &mut Tape, bound: &Bound, image: &Tensor) -> Result<Var> {
        self.check_image(image)?;
        let s = self.config.image_size;
        let mut x = tape.constant(image.clone().reshaped(&[1, 3, s, s])?);
        for (i, l) in self.layers.fe.iter().enumerate() {
            let (w, b) = bound.w(*l);
            x = tape.conv2d(x, w, Some(b), self.config.block_stride(i), 1)?;
            x = tape.leaky_relu(x, LEAKY_SLOPE);
        }
        Ok(x)
    }

    /// PGP heads: `(deltas [1][5k][gh][gw], logits [1][2k][gh][gw])`.
    pub fn pgp_forward(&self, tape: &mut Tape, bound: &Bound, features: Var) -> Result<(Var, Var)> {
        let pad = self.config.head_kernel / 2;
        let (w, b) = bound.w(self.layers.pgp_reg);
        let deltas = tape.conv2d(features, w, Some(b), 1, pad)?;
        let (w, b) = bound.w(self.layers.pgp_cls);
        let logits = tape.conv2d(features, w, Some(b), 1, pad)?;
        Ok((deltas, logits))
    }

    /// Flat offset of channel `ch` at `(row, col)` in a `[1][C][gh][gw]` head.
    fn head_offset(&self, ch: usize, row: usize, col: usize) -> usize {
        (ch * self.grid.grid_h + row) * self.grid.grid_w + col
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, image: &Tensor) -> Result<Forward> {
        let features = self.fe_forward(tape, bound, image)?;
        let (deltas, logits) = self.pgp_forward(tape, bound, features)?;
        let n = self.grid.len();
        let index = (0..n)
            .flat_map(|li| {
                let ix = self.grid.unravel(li);
                (0..2).map(move |j| (ix, j))
            })
            .map(|(ix, j)| Some(self.head_offset(ix.a * 2 + j, ix.row, ix.col)))
            .collect();
        let pairs = tape.gather(logits, index, &[n, 2])?;
        let probs = tape.softmax(pairs)?;
        let primary_probs = tape.gather(probs, (0..n).map(|i| Some(2 * i)).collect(), &[n])?;
        Ok(Forward {
            features,
            deltas,
            logits,
            primary_probs,
        })
    }

    /// Reads a [`PredictionMap`] out of a forward pass.
    pub fn prediction_map(&self, tape: &Tape, fwd: &Forward) -> PredictionMap {
        let (dv, lv) = (tape.value(fwd.deltas).data(), tape.value(fwd.logits).data());
        let n = self.grid.len();
        let mut deltas = Vec::with_capacity(n * 5);
        let mut primary_logits = Vec::with_capacity(n * 2);
        for li in 0..n {
            let ix = self.grid.unravel(li);
            for m in 0..5 {
                deltas.push(dv[self.head_offset(ix.a * 5 + m, ix.row, ix.col)]);
            }
            for j in 0..2 {
                primary_logits.push(lv[self.head_offset(ix.a * 2 + j, ix.row, ix.col)]);
            }
        }
        PredictionMap {
            grid_h: self.grid.grid_h,
            grid_w: self.grid.grid_w,
            k: self.grid.k,
            deltas,
            primary_logits,
        }
    }

    /// Scorer over a batch of candidates (linear anchor indices).
    ///
    /// `delta_src` holds the deltas and `delta_at(li, m)` locates component
    /// `m` of candidate `li` in it. Returns graspable probabilities `[N]`.
    pub fn scorer_batch(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        features: Var,
        delta_src: Var,
        candidates: &[usize],
        delta_at: impl Fn(usize, usize) -> usize,
    ) -> Result<Var> {
        let k = self.config.k;
        let n = candidates.len();
        if let Some(&bad) = candidates.iter().find(|&&li| li >= self.grid.len()) {
            return Err(GraspError::InvalidArgument(format!(
                "candidate {bad} outside grid of {} anchors",
                self.grid.len()
            )));
        }
        let centers: Vec<(usize, usize)> = candidates
            .iter()
            .map(|&li| {
                let ix = self.grid.unravel(li);
                (ix.row, ix.col)
            })
            .collect();
        let patch = tape.crop3x3(features, &centers)?;
        let (w, b) = bound.w(self.layers.scorer_conv);
        let img = tape.conv2d(patch, w, Some(b), 1, 0)?;
        let img = tape.leaky_relu(img, LEAKY_SLOPE);
        let img = tape.flatten(img)?;

        let mut slots = vec![None; n * 5 * k];
        for (row, &li) in candidates.iter().enumerate() {
            let a = self.grid.unravel(li).a;
            for m in 0..5 {
                slots[row * 5 * k + a * 5 + m] = Some(delta_at(li, m));
            }
        }
        let slot_vec = tape.gather(delta_src, slots, &[n, 5 * k])?;
        let (w, b) = bound.w(self.layers.scorer_delta_fc);
        let grasp = tape.linear(slot_vec, w, Some(b))?;
        let grasp = tape.leaky_relu(grasp, LEAKY_SLOPE);

        let joint = tape.concat(&[img, grasp], 1)?;
        let (w, b) = bound.w(self.layers.scorer_fc1);
        let h = tape.linear(joint, w, Some(b))?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        let (w, b) = bound.w(self.layers.scorer_fc2);
        let logits = tape.linear(h, w, Some(b))?;
        let probs = tape.softmax(logits)?;
        tape.gather(probs, (0..n).map(|i| Some(2 * i)).collect(), &[n])
    }

    /// Scorer applied to PGP's own predicted deltas for `candidates`.
    pub fn scorer_on_forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        fwd: &Forward,
        candidates: &[usize],
    ) -> Result<Var> {
        self.scorer_batch(tape, bound, fwd.features, fwd.deltas, candidates, |li, m| {
            let ix = self.grid.unravel(li);
            self.head_offset(ix.a * 5 + m, ix.row, ix.col)
        })
    }

    /// Graspability of one candidate given a feature map `[1][C][gh][gw]`
    /// (or `[C][gh][gw]`) and an explicit deformation.
    pub fn scorer_forward(&self, features: &Tensor, cell: (usize, usize), anchor: usize, delta: &Delta) -> Result<f64> {
        let (row, col) = cell;
        if row >= self.grid.grid_h || col >= self.grid.grid_w || anchor >= self.config.k {
            return Err(GraspError::InvalidArgument(format!(
                "cell {cell:?} / anchor {anchor} outside {}x{}x{} grid",
                self.grid.grid_h, self.grid.grid_w, self.config.k
            )));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let feats = tape.constant(features.clone());
        let d = tape.constant(Tensor::from_vec(delta.to_array().to_vec()));
        let li = self.grid.linear(crate::anchors::AnchorIndex { row, col, a: anchor });
        let p = self.scorer_batch(&mut tape, &bound, feats, d, &[li], |_, m| m)?;
        Ok(tape.value(p).data()[0])
    }

    /// Features and PGP outputs for one image, without gradients.
    pub fn infer(&self, image: &Tensor) -> Result<(Tensor, PredictionMap)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let fwd = self.forward(&mut tape, &bound, image)?;
        Ok((tape.value(fwd.features).clone(), self.prediction_map(&tape, &fwd)))
    }

    /// Scorer probabilities of every candidate, in linear order.
    pub fn scorer_scores(&self, features: &Tensor, map: &PredictionMap) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let feats = tape.constant(features.clone());
        let d = tape.constant(Tensor::from_vec(map.deltas.clone()));
        let all: Vec<usize> = (0..map.len()).collect();
        let p = self.scorer_batch(&mut tape, &bound, feats, d, &all, |li, m| li * 5 + m)?;
        Ok(tape.value(p).data().to_vec())
    }

    pub fn decode_all(&self, map: &PredictionMap) -> Vec<GraspRect> {
        (0..map.len())
            .map(|li| decode(&map.delta(li), &self.grid.anchors()[li], self.config.k))
            .collect()
    }

    /// Every candidate grasp ranked by the chosen score, best first; ties go
    /// to the lower linear index.
    pub fn predict(&self, image: &Tensor, mode: ScoreMode) -> Result<Vec<(GraspRect, f64)>> {
        let (features, map) = self.infer(image)?;
        let scores = match mode {
            ScoreMode::Primary => map.primary_scores(),
            ScoreMode::Scorer => self.scorer_scores(&features, &map)?,
        };
        let grasps = self.decode_all(&map);
        Ok(select_top_t(&scores, scores.len())
            .into_iter()
            .map(|i| (grasps[i], scores[i]))
            .collect())
    }

    /// Highest-ranked grasp only.
    pub fn predict_top1(&self, image: &Tensor, mode: ScoreMode) -> Result<(GraspRect, f64)> {
        Ok(self.predict(image, mode)?[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::AnchorIndex;
    use rand::Rng;

    fn random_image(size: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(&[3, size, size], (0..3 * size * size).map(|_| rng.random()).collect()).unwrap()
    }

    fn small() -> ModelConfig {
        ModelConfig {
            image_size: 32,
            fe_channels: vec![4, 6],
            fe_stride_total: 4,
            k: 6,
            scorer_conv_filters: 3,
            scorer_fc_width: 5,
            ..ModelConfig::desk()
        }
    }

    fn zero_group(m: &mut Model, group: ParamGroup) {
        for p in m.params.iter_mut().filter(|p| p.group == group) {
            p.value.fill(0.0);
        }
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::desk().validate().is_ok());
        assert!(ModelConfig::full_scale().validate().is_ok());
        assert!(ModelConfig::tiny().validate().is_ok());
        let bad = ModelConfig {
            image_size: 60,
            ..ModelConfig::desk()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            fe_stride_total: 16,
            ..ModelConfig::desk()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            k: 0,
            ..ModelConfig::desk()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn full_scale_dimensions() {
        let c = ModelConfig::full_scale();
        assert_eq!(c.grid_size(), 20);
        assert_eq!(c.feature_channels(), 1024);
        assert_eq!(c.scorer_concat_len(), 9728);
        assert_eq!(c.grid_size() * c.grid_size() * c.k, 2400);
    }

    #[test]
    fn desk_feature_shape() {
        let m = Model::new(ModelConfig {
            fe_channels: vec![16, 32, 32],
            ..ModelConfig::desk()
        })
        .unwrap();
        let mut tape = Tape::new();
        let b = m.bind(&mut tape);
        let f = m.fe_forward(&mut tape, &b, &random_image(64, 0)).unwrap();
        assert_eq!(tape.shape(f), &[1, 32, 8, 8]);
        let (d, l) = m.pgp_forward(&mut tape, &b, f).unwrap();
        assert_eq!(tape.shape(d), &[1, 30, 8, 8]);
        assert_eq!(tape.shape(l), &[1, 12, 8, 8]);
        assert!(m.fe_forward(&mut tape, &b, &random_image(32, 0)).is_err());
    }

    #[test]
    fn zero_image_zero_bias_gives_zero_features() {
        let m = Model::new(small()).unwrap();
        let mut tape = Tape::new();
        let b = m.bind(&mut tape);
        let f = m.fe_forward(&mut tape, &b, &Tensor::zeros(&[3, 32, 32])).unwrap();
        assert!(tape.value(f).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_heads_reproduce_anchors() {
        let mut m = Model::new(small()).unwrap();
        zero_group(&mut m, ParamGroup::Pgp);
        let (_, map) = m.infer(&random_image(32, 1)).unwrap();
        assert!(map.primary_scores().iter().all(|&p| p == 0.5));
        for (g, a) in m.decode_all(&map).iter().zip(m.grid.anchors()) {
            assert_eq!(*g, a.as_grasp());
        }
    }

    #[test]
    fn zero_final_layer_gives_half() {
        let mut m = Model::new(small()).unwrap();
        let id = m.params.find("scorer.fc2.weight").unwrap();
        m.params.get_mut(id).value.fill(0.0);
        let (f, map) = m.infer(&random_image(32, 2)).unwrap();
        assert!(m.scorer_scores(&f, &map).unwrap().iter().all(|&p| p == 0.5));
        let d = Delta {
            dx: 0.3,
            ..Default::default()
        };
        assert_eq!(m.scorer_forward(&f, (1, 2), 3, &d).unwrap(), 0.5);
    }

    #[test]
    fn untrained_zero_model_ranks_index_zero_first() {
        let mut m = Model::new(small()).unwrap();
        for p in m.params.iter_mut() {
            p.value.fill(0.0);
        }
        let img = random_image(32, 3);
        for mode in [ScoreMode::Primary, ScoreMode::Scorer] {
            let ranked = m.predict(&img, mode).unwrap();
            assert_eq!(ranked.len(), m.num_candidates());
            assert_eq!(ranked[0].0, m.grid.anchors()[0].as_grasp());
        }
    }

    #[test]
    fn scorer_batch_matches_single_candidate() {
        let m = Model::new(small()).unwrap();
        let (f, map) = m.infer(&random_image(32, 4)).unwrap();
        let all = m.scorer_scores(&f, &map).unwrap();
        for li in [0, 17, 100, map.len() - 1] {
            let ix = m.grid.unravel(li);
            let p = m.scorer_forward(&f, (ix.row, ix.col), ix.a, &map.delta(li)).unwrap();
            assert!((p - all[li]).abs() < 1e-12);
        }
    }

    #[test]
    fn scorer_only_sees_local_patch() {
        let m = Model::new(small()).unwrap();
        let (f, _) = m.infer(&random_image(32, 5)).unwrap();
        let d = Delta {
            dx: 0.2,
            dy: -0.1,
            dw: 0.05,
            dh: 0.0,
            dtheta: 0.3,
        };
        let base = m.scorer_forward(&f, (3, 3), 2, &d).unwrap();
        // Scramble every feature outside rows/cols 2..=4.
        let mut g = f.clone();
        let (c, h, w) = (f.shape()[1], f.shape()[2], f.shape()[3]);
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    if !(2..=4).contains(&i) || !(2..=4).contains(&j) {
                        g.data_mut()[(ch * h + i) * w + j] = (i * 31 + j * 7 + ch) as f64;
                    }
                }
            }
        }
        assert_eq!(m.scorer_forward(&g, (3, 3), 2, &d).unwrap(), base);
    }

    #[test]
    fn slot_position_matters() {
        let m = Model::new(small()).unwrap();
        let (f, _) = m.infer(&random_image(32, 6)).unwrap();
        let d = Delta {
            dx: 0.5,
            dy: -0.4,
            dw: 0.3,
            dh: 0.2,
            dtheta: 0.1,
        };
        let a = m.scorer_forward(&f, (1, 1), 0, &d).unwrap();
        let b = m.scorer_forward(&f, (1, 1), 4, &d).unwrap();
        assert_ne!(a, b);
        assert!(m.scorer_forward(&f, (8, 0), 0, &d).is_err());
        assert!(m.scorer_forward(&f, (0, 0), 6, &d).is_err());
    }

    #[test]
    fn every_parameter_in_one_group() {
        let m = Model::new(ModelConfig::desk()).unwrap();
        let mut seen = std::collections::HashSet::new();
        for (_, p) in m.params.iter() {
            assert!(seen.insert(p.name.clone()));
            let prefix = p.name.split('.').next().unwrap();
            let want = match prefix {
                "fe" => ParamGroup::Fe,
                "pgp" => ParamGroup::Pgp,
                "scorer" => ParamGroup::Scorer,
                other => panic!("unregistered prefix {other}"),
            };
            assert_eq!(p.group, want, "{}", p.name);
        }
        assert_eq!(m.params.len(), 2 * (3 + 2 + 4));
    }

    #[test]
    fn prediction_map_layout() {
        let m = Model::new(small()).unwrap();
        let mut tape = Tape::new();
        let b = m.bind(&mut tape);
        let fwd = m.forward(&mut tape, &b, &random_image(32, 7)).unwrap();
        let map = m.prediction_map(&tape, &fwd);
        let li = m.grid.linear(AnchorIndex { row: 5, col: 2, a: 4 });
        let raw = tape.value(fwd.deltas).data();
        assert_eq!(map.delta(li).dh, raw[((4 * 5 + 3) * 8 + 5) * 8 + 2]);
        let probs = tape.value(fwd.primary_probs).data();
        assert!((probs[li] - map.primary_score(li)).abs() < 1e-12);
    }
}
