//! The assembled network: ChebNet readout and Deep & Cross features fused
//! into `Z′`, a varying-coefficient outcome head and a density head.

use serde::{Deserialize, Serialize};

use super::config::{Config, Demographics};
use super::data::{Dataset, NormStats};
use crate::error::{Error, Result};
use crate::graph::{scale_laplacian, RoiGraph, ScaledLaplacian};
use crate::netblocks::{
    cross_layer, cross_layer_backward, embed_and_stack, embed_backward, mean_pool,
    mean_pool_backward, Activation, ChebConv, ChebTape, Dense,
};
use crate::numerics::{sigmoid, Differentiable, Matrix, ParamStore, Rng};
use crate::vchead::{basis_matrix, density_nll, theta_of_t, SplineBasis, VaryingLayer, VaryingTape};

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` inside the
/// cross-entropy.
pub const PROB_CLAMP: f64 = 1e-7;

/// Model inputs for a set of subjects, normalized with training statistics.
#[derive(Clone, Debug)]
pub struct Batch {
    /// Covariate ROI signals, node-major `(N·B) × 1`.
    pub x: Matrix,
    pub t: Vec<f64>,
    pub phi: Matrix,
    pub levels: Vec<usize>,
    /// `B × dense_features`
    pub dense: Matrix,
    pub labels: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Architecture and fixed operators; the learnable weights live in a
/// separate [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub config: Config,
    pub laplacian: ScaledLaplacian,
    pub basis: SplineBasis,
}

#[derive(Clone, Debug)]
struct DcnTape {
    x0: Matrix,
    cross_inputs: Vec<Matrix>,
    cross_dots: Vec<Vec<f64>>,
    deep_inputs: Vec<Matrix>,
    deep_pre: Vec<Matrix>,
    joined: Matrix,
    combine_pre: Matrix,
}

#[derive(Clone, Debug)]
pub struct LatentTape {
    cheb: Vec<ChebTape>,
    dcn: Option<DcnTape>,
}

pub struct Forward {
    pub z: Matrix,
    pub logits: Vec<f64>,
    pub density_logits: Matrix,
}

pub struct Tape {
    latent: LatentTape,
    hidden: VaryingTape,
    output: VaryingTape,
}

type Grads = Vec<(String, Matrix)>;

fn finite(m: &Matrix, layer: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("output of layer {layer}")))
    }
}

impl Network {
    pub fn new(config: Config, laplacian: ScaledLaplacian) -> Result<Self> {
        config.validate()?;
        let basis = SplineBasis::clamped(config.spline_degree, &config.spline_knots)?;
        Ok(Self {
            config,
            laplacian,
            basis,
        })
    }

    pub fn nodes(&self) -> usize {
        self.laplacian.nodes()
    }

    fn cheb_layer(&self, k: usize) -> ChebConv {
        ChebConv {
            in_dim: if k == 0 { 1 } else { self.config.cheb_hidden },
            out_dim: self.config.cheb_hidden,
            order: self.config.cheb_order,
            activation: Activation::Relu,
        }
    }

    fn dcn_enabled(&self) -> bool {
        self.config.demographics != Demographics::Off
    }

    /// Width of `x_0`.
    pub fn stack_dim(&self) -> usize {
        if self.dcn_enabled() {
            self.config.sex_embed + self.config.demographics.dense_features()
        } else {
            0
        }
    }

    fn deep_layer(&self, l: usize) -> Dense {
        Dense {
            in_dim: if l == 0 { self.stack_dim() } else { self.config.deep_hidden },
            out_dim: self.config.deep_hidden,
            activation: Activation::Relu,
        }
    }

    fn combine_layer(&self) -> Dense {
        Dense {
            in_dim: self.stack_dim() + self.config.deep_hidden,
            out_dim: self.config.dcn_out,
            activation: Activation::Identity,
        }
    }

    /// Width of `Z′`.
    pub fn latent_dim(&self) -> usize {
        self.config.cheb_hidden + if self.dcn_enabled() { self.config.dcn_out } else { 0 }
    }

    fn hidden_layer(&self) -> VaryingLayer {
        VaryingLayer {
            in_dim: self.latent_dim(),
            out_dim: self.config.vc_hidden,
            activation: Activation::Relu,
        }
    }

    fn output_layer(&self) -> VaryingLayer {
        VaryingLayer {
            in_dim: self.config.vc_hidden,
            out_dim: 1,
            activation: Activation::Identity,
        }
    }

    fn density_layer(&self) -> Dense {
        Dense {
            in_dim: self.latent_dim(),
            out_dim: self.config.grid_b + 1,
            activation: Activation::Identity,
        }
    }

    /// Xavier-uniform weights and zero biases, drawn in a fixed order.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = Rng::new(seed);
        let mut p = ParamStore::new();
        let cfg = &self.config;
        for k in 0..cfg.cheb_layers {
            let layer = self.cheb_layer(k);
            let (r, c) = layer.theta_shape();
            p.insert_xavier(format!("cheb.{k}.theta"), r, c, layer.in_dim, layer.out_dim, &mut rng);
        }
        if self.dcn_enabled() {
            let d = self.stack_dim();
            p.insert_xavier("dcn.embed.sex", cfg.sex_levels, cfg.sex_embed, cfg.sex_levels, cfg.sex_embed, &mut rng);
            for l in 0..cfg.cross_layers {
                p.insert_xavier(format!("dcn.cross.{l}.w"), d, 1, d, 1, &mut rng);
                p.insert(format!("dcn.cross.{l}.b"), Matrix::zeros(1, d));
            }
            for l in 0..cfg.deep_layers {
                let layer = self.deep_layer(l);
                p.insert_xavier(format!("dcn.deep.{l}.w"), layer.in_dim, layer.out_dim, layer.in_dim, layer.out_dim, &mut rng);
                p.insert(format!("dcn.deep.{l}.b"), Matrix::zeros(1, layer.out_dim));
            }
            let c = self.combine_layer();
            p.insert_xavier("dcn.combine.w", c.in_dim, c.out_dim, c.in_dim, c.out_dim, &mut rng);
            p.insert("dcn.combine.b", Matrix::zeros(1, c.out_dim));
        }
        let l = self.basis.len();
        for (name, layer) in [("vc.hidden.coef", self.hidden_layer()), ("vc.out.coef", self.output_layer())] {
            let (r, c) = layer.coef_shape(l);
            p.insert_xavier(name, r, c, layer.in_dim + 1, layer.out_dim, &mut rng);
        }
        let d = self.density_layer();
        p.insert_xavier("density.w", d.in_dim, d.out_dim, d.in_dim, d.out_dim, &mut rng);
        p.insert("density.b", Matrix::zeros(1, d.out_dim));
        p
    }

    /// `Z′ = [mean-pooled ChebNet output ∥ Deep & Cross output]`.
    pub fn latent(&self, p: &ParamStore, batch: &Batch) -> Result<(Matrix, LatentTape)> {
        let cfg = &self.config;
        let mut h = batch.x.clone();
        let mut cheb = Vec::with_capacity(cfg.cheb_layers);
        for k in 0..cfg.cheb_layers {
            let (out, tape) = self.cheb_layer(k).forward(&self.laplacian, &h, p.value(&format!("cheb.{k}.theta"))?)?;
            finite(&out, &format!("cheb.{k}"))?;
            cheb.push(tape);
            h = out;
        }
        let pooled = mean_pool(&h, self.nodes())?;
        if !self.dcn_enabled() {
            return Ok((pooled, LatentTape { cheb, dcn: None }));
        }

        let x0 = embed_and_stack(&batch.levels, &batch.dense, p.value("dcn.embed.sex")?)?;
        let mut xl = x0.clone();
        let mut cross_inputs = Vec::new();
        let mut cross_dots = Vec::new();
        for l in 0..cfg.cross_layers {
            let (next, dots) = cross_layer(
                &x0,
                &xl,
                p.value(&format!("dcn.cross.{l}.w"))?,
                p.value(&format!("dcn.cross.{l}.b"))?,
            )?;
            finite(&next, &format!("dcn.cross.{l}"))?;
            cross_inputs.push(std::mem::replace(&mut xl, next));
            cross_dots.push(dots);
        }
        let mut deep = x0.clone();
        let mut deep_inputs = Vec::new();
        let mut deep_pre = Vec::new();
        for l in 0..cfg.deep_layers {
            let (out, pre) = self.deep_layer(l).forward(
                &deep,
                p.value(&format!("dcn.deep.{l}.w"))?,
                p.value(&format!("dcn.deep.{l}.b"))?,
            )?;
            finite(&out, &format!("dcn.deep.{l}"))?;
            deep_inputs.push(std::mem::replace(&mut deep, out));
            deep_pre.push(pre);
        }
        let joined = Matrix::hcat(&[&xl, &deep])?;
        let (dcn_out, combine_pre) = self.combine_layer().forward(&joined, p.value("dcn.combine.w")?, p.value("dcn.combine.b")?)?;
        finite(&dcn_out, "dcn.combine")?;
        let z = Matrix::hcat(&[&pooled, &dcn_out])?;
        Ok((
            z,
            LatentTape {
                cheb,
                dcn: Some(DcnTape {
                    x0,
                    cross_inputs,
                    cross_dots,
                    deep_inputs,
                    deep_pre,
                    joined,
                    combine_pre,
                }),
            },
        ))
    }

    fn latent_backward(&self, p: &ParamStore, batch: &Batch, tape: &LatentTape, d_z: &Matrix) -> Result<Grads> {
        let cfg = &self.config;
        let mut grads = Grads::new();
        let cheb_dim = cfg.cheb_hidden;
        if let Some(dcn) = &tape.dcn {
            let d_dcn = d_z.columns(cheb_dim, cfg.dcn_out);
            let combine = self.combine_layer();
            let g = combine.backward(&dcn.joined, p.value("dcn.combine.w")?, &dcn.combine_pre, &d_dcn)?;
            grads.push(("dcn.combine.w".into(), g.w));
            grads.push(("dcn.combine.b".into(), g.b));
            let d0 = self.stack_dim();
            let mut d_cross = g.input.columns(0, d0);
            let mut d_deep = g.input.columns(d0, cfg.deep_hidden);

            let mut d_x0 = Matrix::zeros(dcn.x0.rows(), d0);
            for l in (0..cfg.deep_layers).rev() {
                let gl = self.deep_layer(l).backward(
                    &dcn.deep_inputs[l],
                    p.value(&format!("dcn.deep.{l}.w"))?,
                    &dcn.deep_pre[l],
                    &d_deep,
                )?;
                grads.push((format!("dcn.deep.{l}.w"), gl.w));
                grads.push((format!("dcn.deep.{l}.b"), gl.b));
                d_deep = gl.input;
            }
            d_x0.add_assign(&d_deep)?;
            for l in (0..cfg.cross_layers).rev() {
                let gl = cross_layer_backward(
                    &dcn.x0,
                    &dcn.cross_inputs[l],
                    p.value(&format!("dcn.cross.{l}.w"))?,
                    &dcn.cross_dots[l],
                    &d_cross,
                )?;
                grads.push((format!("dcn.cross.{l}.w"), gl.w));
                grads.push((format!("dcn.cross.{l}.b"), gl.b));
                d_x0.add_assign(&gl.x0)?;
                d_cross = gl.xl;
            }
            d_x0.add_assign(&d_cross)?;
            let table = p.value("dcn.embed.sex")?;
            grads.push(("dcn.embed.sex".into(), embed_backward(&batch.levels, &d_x0, table.shape())));
        }

        let mut d_h = mean_pool_backward(&d_z.columns(0, cheb_dim), self.nodes());
        for k in (0..cfg.cheb_layers).rev() {
            let name = format!("cheb.{k}.theta");
            let g = self.cheb_layer(k).backward(&self.laplacian, p.value(&name)?, &tape.cheb[k], &d_h)?;
            grads.push((name, g.theta));
            d_h = g.input;
        }
        Ok(grads)
    }

    pub fn forward(&self, p: &ParamStore, batch: &Batch) -> Result<(Forward, Tape)> {
        let (z, latent) = self.latent(p, batch)?;
        let (hidden_out, hidden) = self.hidden_layer().forward(&z, &batch.phi, p.value("vc.hidden.coef")?)?;
        finite(&hidden_out, "vc.hidden")?;
        let (logits, output) = self.output_layer().forward(&hidden_out, &batch.phi, p.value("vc.out.coef")?)?;
        finite(&logits, "vc.out")?;
        let (density_logits, _) = self.density_layer().forward(&z, p.value("density.w")?, p.value("density.b")?)?;
        finite(&density_logits, "density")?;
        Ok((
            Forward {
                z,
                logits: logits.into_vec(),
                density_logits,
            },
            Tape {
                latent,
                hidden,
                output,
            },
        ))
    }

    /// Smallest `|pre-activation|` over every relu unit in the batch.
    pub fn relu_margin(&self, p: &ParamStore, batch: &Batch) -> Result<f64> {
        let (_, tape) = self.forward(p, batch)?;
        let mut pres: Vec<&Matrix> = tape.latent.cheb.iter().map(|t| t.pre_activation()).collect();
        if let Some(dcn) = &tape.latent.dcn {
            pres.extend(dcn.deep_pre.iter());
        }
        pres.push(tape.hidden.pre_activation());
        Ok(pres
            .iter()
            .flat_map(|m| m.as_slice().iter())
            .fold(f64::INFINITY, |a, v| a.min(v.abs())))
    }

    /// Mean over the batch of `BCE + β·(−ln p(t|z))`, with its gradient.
    pub fn loss_and_grads(&self, p: &ParamStore, batch: &Batch) -> Result<(f64, Grads)> {
        let (fwd, tape) = self.forward(p, batch)?;
        let n = batch.len();
        if n == 0 {
            return Err(Error::invalid("loss of an empty batch"));
        }
        let inv = 1.0 / n as f64;
        let beta = self.config.beta;
        let mut total = 0.0;
        let mut d_logits = Matrix::zeros(n, 1);
        let mut d_density = Matrix::zeros(n, self.config.grid_b + 1);
        for b in 0..n {
            let (bce, g) = bce_with_logit(fwd.logits[b], batch.labels[b]);
            let (nll, g_density) = density_nll(batch.t[b], fwd.density_logits.row(b))?;
            total += bce + beta * nll;
            d_logits.set(b, 0, g * inv);
            for (d, v) in d_density.row_mut(b).iter_mut().zip(&g_density) {
                *d = beta * inv * v;
            }
        }
        let loss = total * inv;

        let mut grads = Grads::new();
        let go = self.output_layer().backward(&batch.phi, p.value("vc.out.coef")?, &tape.output, &d_logits)?;
        grads.push(("vc.out.coef".into(), go.coef));
        let gh = self.hidden_layer().backward(&batch.phi, p.value("vc.hidden.coef")?, &tape.hidden, &go.input)?;
        grads.push(("vc.hidden.coef".into(), gh.coef));
        let density = self.density_layer();
        let gd = density.backward(&fwd.z, p.value("density.w")?, &fwd.density_logits, &d_density)?;
        grads.push(("density.w".into(), gd.w));
        grads.push(("density.b".into(), gd.b));
        let mut d_z = gh.input;
        d_z.add_assign(&gd.input)?;
        grads.extend(self.latent_backward(p, batch, &tape.latent, &d_z)?);
        Ok((loss, grads))
    }

    pub fn loss(&self, p: &ParamStore, batch: &Batch) -> Result<f64> {
        Ok(self.loss_and_grads(p, batch)?.0)
    }

    /// `σ(f_{θ(t)}(z))` for every row of `z`, with weights materialized at `t`.
    pub fn dose_response(&self, p: &ParamStore, z: &Matrix, t: f64) -> Result<Vec<f64>> {
        let phi = self.basis.eval(t)?;
        let hidden = self.hidden_layer();
        let th = theta_of_t(p.value("vc.hidden.coef")?, hidden.in_dim, &phi)?;
        let to = theta_of_t(p.value("vc.out.coef")?, hidden.out_dim, &phi)?;
        let h = with_bias_column(z).matmul(&th)?.map(|v| v.max(0.0));
        let y = with_bias_column(&h).matmul(&to)?;
        Ok(y.as_slice().iter().map(|&v| sigmoid(v)).collect())
    }
}

fn with_bias_column(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols() + 1);
    for r in 0..m.rows() {
        let row = out.row_mut(r);
        row[..m.cols()].copy_from_slice(m.row(r));
        row[m.cols()] = 1.0;
    }
    out
}

/// Clamped binary cross-entropy and its derivative with respect to the
/// logit (zero where the clamp is active).
pub fn bce_with_logit(logit: f64, label: f64) -> (f64, f64) {
    let p = sigmoid(logit);
    let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if p != pc {
        return (-(label * pc.ln() + (1.0 - label) * (1.0 - pc).ln()), 0.0);
    }
    // −ln σ(x) = softplus(−x), −ln(1 − σ(x)) = softplus(x)
    let value = label * softplus(-logit) + (1.0 - label) * softplus(logit);
    (value, p - label)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `BCE(y_prob, label) + β·(−ln p(t|z))` for one subject.
pub fn loss(y_prob: f64, label: f64, p_t_given_z: f64, beta: f64) -> Result<f64> {
    if !(p_t_given_z > 0.0) {
        return Err(Error::invalid(format!("density must be positive, got {p_t_given_z}")));
    }
    let pc = y_prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    Ok(-(label * pc.ln() + (1.0 - label) * (1.0 - pc).ln()) - beta * p_t_given_z.ln())
}

/// Loss of a fixed batch as a function of the parameters.
pub struct Objective<'a> {
    pub network: &'a Network,
    pub batch: &'a Batch,
}

impl Differentiable for Objective<'_> {
    fn value(&self, params: &ParamStore) -> Result<f64> {
        self.network.loss(params, self.batch)
    }

    fn gradient(&self, params: &mut ParamStore) -> Result<f64> {
        let (loss, grads) = self.network.loss_and_grads(params, self.batch)?;
        for (name, g) in grads {
            params.accumulate_grad(&name, &g)?;
        }
        Ok(loss)
    }
}

/// One trained (or freshly assembled) model for a single treatment ROI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GvcnetModel {
    pub treatment: String,
    /// Covariate graph, treatment node removed.
    pub graph: RoiGraph,
    pub network: Network,
    pub params: ParamStore,
    /// Training statistics and the dataset column order they refer to.
    pub stats: Option<NormStats>,
    pub data_rois: Vec<String>,
}

/// Builds the model for `treatment_roi`, dropping it from the graph.
pub fn assemble(graph: &RoiGraph, treatment_roi: &str, config: &Config) -> Result<GvcnetModel> {
    let reduced = graph.remove_node(treatment_roi)?;
    let laplacian = scale_laplacian(&reduced.laplacian())?;
    let network = Network::new(config.clone(), laplacian)?;
    let params = network.init_params(config.seed);
    Ok(GvcnetModel {
        treatment: treatment_roi.to_string(),
        graph: reduced,
        network,
        params,
        stats: None,
        data_rois: Vec::new(),
    })
}

impl GvcnetModel {
    pub fn config(&self) -> &Config {
        &self.network.config
    }

    /// Fixes the normalization used for every later batch.
    pub fn attach_stats(&mut self, ds: &Dataset) -> Result<()> {
        let stats = ds.stats()?.clone();
        if stats.sex_levels.len() > self.config().sex_levels && self.config().demographics != Demographics::Off {
            return Err(Error::invalid(format!(
                "training data has {} sex levels but the embedding holds {}",
                stats.sex_levels.len(),
                self.config().sex_levels
            )));
        }
        self.stats = Some(stats);
        self.data_rois = ds.roi_names.clone();
        Ok(())
    }

    fn stats(&self) -> Result<&NormStats> {
        self.stats
            .as_ref()
            .ok_or_else(|| Error::invalid("model has no normalization statistics; train it first"))
    }

    fn stats_column(&self, roi: &str) -> Result<usize> {
        self.data_rois
            .iter()
            .position(|n| n == roi)
            .ok_or_else(|| Error::invalid(format!("ROI {roi:?} missing from the model's training data")))
    }

    /// Normalizes `ds` with the model's statistics.
    pub fn prepare(&self, ds: &Dataset) -> Result<Batch> {
        let stats = self.stats()?;
        let n = self.graph.len();
        let b = ds.len();
        let t_data = ds.roi_index(&self.treatment)?;
        let t_stats = self.stats_column(&self.treatment)?;
        let mut cols = Vec::with_capacity(n);
        for name in self.graph.names() {
            cols.push((ds.roi_index(name)?, self.stats_column(name)?));
        }
        let mut x = Matrix::zeros(n * b, 1);
        for (i, &(dc, sc)) in cols.iter().enumerate() {
            for (s, subj) in ds.subjects.iter().enumerate() {
                x.set(i * b + s, 0, stats.roi[sc].z(subj.roi_signals[dc]));
            }
        }
        let t: Vec<f64> = ds
            .subjects
            .iter()
            .map(|s| stats.treatment(t_stats, s.roi_signals[t_data]))
            .collect();
        let phi = basis_matrix(&self.network.basis, &t)?;
        let demo = self.config().demographics;
        let mut dense = Matrix::zeros(b, demo.dense_features());
        let mut levels = vec![0; b];
        if demo != Demographics::Off {
            for (s, subj) in ds.subjects.iter().enumerate() {
                levels[s] = stats.sex_level(&subj.sex)?;
                let row = dense.row_mut(s);
                row[0] = stats.age.z(subj.age);
                if demo == Demographics::Full {
                    row[1] = stats.mmse.z(subj.mmse);
                    row[2] = stats.cdr.z(subj.cdr);
                }
            }
        }
        Ok(Batch {
            x,
            t,
            phi,
            levels,
            dense,
            labels: ds.subjects.iter().map(|s| s.label as f64).collect(),
        })
    }

    /// Outcome probabilities at the observed treatments.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        let (fwd, _) = self.network.forward(&self.params, batch)?;
        Ok(fwd.logits.iter().map(|&v| sigmoid(v)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::data::{split_dataset, SubjectRecord};

    fn toy_data(n: usize, rois: usize, seed: u64) -> (Dataset, RoiGraph) {
        let mut rng = Rng::new(seed);
        let names: Vec<String> = (0..rois).map(|r| format!("r{r}")).collect();
        let subjects = (0..n)
            .map(|_| SubjectRecord {
                roi_signals: (0..rois).map(|_| rng.uniform()).collect(),
                age: 75.0 + 7.0 * rng.normal(),
                sex: if rng.bernoulli(0.5) { "F".into() } else { "M".into() },
                mmse: 25.0 + 2.0 * rng.normal(),
                cdr: rng.uniform(),
                label: rng.bernoulli(0.5) as u8,
            })
            .collect();
        (
            Dataset::new(names.clone(), subjects).unwrap(),
            RoiGraph::ring(names).unwrap(),
        )
    }

    #[test]
    fn removes_treatment_node() {
        let names: Vec<String> = (0..62).map(|r| format!("r{r}")).collect();
        let g = RoiGraph::ring(names).unwrap();
        let m = assemble(&g, "r7", &Config::default()).unwrap();
        assert_eq!(m.graph.len(), 61);
        assert_eq!(m.network.nodes(), 61);
        assert!(assemble(&g, "nope", &Config::default()).is_err());
    }

    #[test]
    fn latent_dims_per_preset() {
        let g = RoiGraph::ring((0..5).map(|r| format!("r{r}")).collect()).unwrap();
        let full = assemble(&g, "r0", &Config::default()).unwrap();
        assert_eq!(full.network.stack_dim(), 7);
        assert_eq!(full.network.latent_dim(), 48);
        let age_sex = assemble(&g, "r0", &Config { demographics: Demographics::AgeSex, ..Config::default() }).unwrap();
        assert_eq!(age_sex.network.stack_dim(), 5);
        let off = assemble(&g, "r0", &Config { demographics: Demographics::Off, ..Config::default() }).unwrap();
        assert_eq!(off.network.latent_dim(), 32);
        assert!(!off.params.contains("dcn.combine.w"));
    }

    #[test]
    fn same_seed_same_initial_params() {
        let g = RoiGraph::ring((0..5).map(|r| format!("r{r}")).collect()).unwrap();
        let a = assemble(&g, "r2", &Config::default()).unwrap();
        let b = assemble(&g, "r2", &Config::default()).unwrap();
        assert_eq!(a.params, b.params);
        let c = assemble(&g, "r2", &Config { seed: 1, ..Config::default() }).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn zero_outcome_head_predicts_one_half() {
        let (ds, g) = toy_data(30, 5, 1);
        let (train, _) = split_dataset(&ds, 0.3, 0).unwrap();
        let mut m = assemble(&g, "r1", &Config::default()).unwrap();
        m.attach_stats(&train).unwrap();
        m.params.value_mut("vc.hidden.coef").unwrap().fill(0.0);
        m.params.value_mut("vc.out.coef").unwrap().fill(0.0);
        let batch = m.prepare(&train).unwrap();
        assert!(m.predict(&batch).unwrap().iter().all(|&p| p == 0.5));
        let (fwd, _) = m.network.forward(&m.params, &batch).unwrap();
        for b in 0..batch.len() {
            let s: f64 = crate::vchead::softmax(fwd.density_logits.row(b)).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn batched_and_theta_routes_agree() {
        let (ds, g) = toy_data(20, 5, 2);
        let (train, _) = split_dataset(&ds, 0.3, 0).unwrap();
        let mut m = assemble(&g, "r3", &Config::default()).unwrap();
        m.attach_stats(&train).unwrap();
        let batch = m.prepare(&train).unwrap();
        let (fwd, _) = m.network.forward(&m.params, &batch).unwrap();
        for b in 0..batch.len() {
            let single = m.network.dose_response(&m.params, &fwd.z.row_block(b, 1), batch.t[b]).unwrap();
            assert!((single[0] - sigmoid(fwd.logits[b])).abs() < 1e-12);
        }
    }

    #[test]
    fn permuting_covariate_rois_is_equivariant() {
        let (ds, g) = toy_data(12, 5, 3);
        let (train, _) = split_dataset(&ds, 0.25, 0).unwrap();
        let mut m = assemble(&g, "r0", &Config::default()).unwrap();
        m.attach_stats(&train).unwrap();
        let base = m.predict(&m.prepare(&train).unwrap()).unwrap();

        // columns r1 and r3 trade places in the file, graph nodes are reordered
        let mut ds2 = ds.clone();
        ds2.roi_names.swap(1, 3);
        for s in ds2.subjects.iter_mut() {
            s.roi_signals.swap(1, 3);
        }
        let (train2, _) = split_dataset(&ds2, 0.25, 0).unwrap();
        let perm = [0usize, 3, 2, 1, 4];
        let adj = g.adjacency();
        let mut adj2 = Matrix::zeros(5, 5);
        for i in 0..5 {
            for j in 0..5 {
                adj2.set(i, j, adj.get(perm[i], perm[j]));
            }
        }
        let names2: Vec<String> = perm.iter().map(|&i| format!("r{i}")).collect();
        let g2 = RoiGraph::new(names2, adj2).unwrap();
        let mut m2 = assemble(&g2, "r0", &Config::default()).unwrap();
        m2.params = m.params.clone();
        m2.attach_stats(&train2).unwrap();
        let permuted = m2.predict(&m2.prepare(&train2).unwrap()).unwrap();
        for (a, b) in base.iter().zip(&permuted) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        assert!((loss(0.5, 1.0, 1.0, 0.5).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(loss(1.0 - 1e-12, 1.0, 1.0, 0.5).unwrap() < 1e-6);
        assert_eq!(loss(0.3, 0.0, 2.0, 0.0).unwrap(), -(0.7f64).ln());
        assert!(loss(0.3, 0.0, 0.0, 0.5).is_err());
        assert_eq!(bce_with_logit(40.0, 1.0).1, 0.0);
    }
}
