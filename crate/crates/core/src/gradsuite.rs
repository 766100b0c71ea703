//! Randomized finite-difference audit of every hand-written backward pass.
//!
//! Each operation is wrapped as a scalar objective over a [`ParamStore`]
//! that holds both its weights and its inputs, so one check covers the
//! weight and input adjoints. Per-op objectives are random linear
//! functionals `Σ c ⊙ out`; the composite objective is the training loss.
//!
//! Central differences are meaningless across a relu kink or when a
//! coordinate's gradient sits at the level of the differencing round-off,
//! so configurations with a pre-activation within [`KINK_MARGIN`] of zero,
//! or with a nonzero gradient coordinate below `MIN_GRADIENT·max(1, |f|)`,
//! are redrawn, as are composite draws with a logit within one unit of the
//! probability clamp. The number of redraws is reported.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{scale_laplacian, RoiGraph, ScaledLaplacian};
use crate::netblocks::{
    combine, cross_layer, cross_layer_backward, embed_and_stack, embed_backward, Activation,
    ChebConv, Dense,
};
use crate::numerics::{check_gradients, mix, Differentiable, EntryError, Matrix, ParamStore, Rng};
use crate::pipeline::{assemble, Config, Dataset, Demographics, NormStats, Objective, SubjectRecord};
use crate::vchead::{basis_matrix, density_nll, SplineBasis, VaryingLayer};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;
pub const KINK_MARGIN: f64 = 1e-3;
pub const MIN_GRADIENT: f64 = 1e-5;
/// `|logit|` at which the cross-entropy clamp engages, about 16.1.
const CLAMP_LOGIT: f64 = 16.118095;
const MAX_ATTEMPTS: usize = 200;

pub const OPS: [&str; 8] = [
    "chebnet",
    "cross",
    "deep",
    "combine",
    "embedding",
    "varying_head",
    "density_head",
    "composite_loss",
];

#[derive(Clone, Debug, Serialize)]
pub struct OpReport {
    pub op: String,
    pub configs: usize,
    pub redrawn: usize,
    pub max_rel_error: f64,
    pub worst: Option<EntryError>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub tol: f64,
    pub ops: Vec<OpReport>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.ops.iter().all(|o| o.max_rel_error < self.tol)
    }
}

type Grads = Vec<(String, Matrix)>;
type ValueFn = Box<dyn Fn(&ParamStore) -> Result<f64>>;
type GradFn = Box<dyn Fn(&ParamStore) -> Result<Grads>>;

struct Case {
    store: ParamStore,
    value: ValueFn,
    grads: GradFn,
}

impl Differentiable for Case {
    fn value(&self, params: &ParamStore) -> Result<f64> {
        (self.value)(params)
    }

    fn gradient(&self, params: &mut ParamStore) -> Result<f64> {
        for (name, g) in (self.grads)(params)? {
            params.accumulate_grad(&name, &g)?;
        }
        (self.value)(params)
    }
}

fn random(rng: &mut Rng, r: usize, c: usize, scale: f64) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| scale * rng.normal()).collect()).expect("sized")
}

fn functional(out: &Matrix, c: &Matrix) -> f64 {
    out.as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b).sum()
}

fn min_abs(m: &Matrix) -> f64 {
    m.as_slice().iter().fold(f64::INFINITY, |a, v| a.min(v.abs()))
}

fn small_graph(rng: &mut Rng, nodes: usize) -> Result<RoiGraph> {
    let names: Vec<String> = (0..nodes).map(|i| format!("n{i}")).collect();
    if rng.bernoulli(0.5) {
        RoiGraph::ring(names)
    } else {
        RoiGraph::random_geometric(names, 0.9, rng)
    }
}

fn small_laplacian(rng: &mut Rng, nodes: usize) -> Option<ScaledLaplacian> {
    let g = small_graph(rng, nodes).ok()?;
    scale_laplacian(&g.laplacian()).ok()
}

fn cheb_case(rng: &mut Rng) -> Option<Case> {
    let nodes = 2 + rng.index(5);
    let lt = small_laplacian(rng, nodes)?;
    let batch = 1 + rng.index(3);
    let layer = ChebConv {
        in_dim: 1 + rng.index(3),
        out_dim: 1 + rng.index(3),
        order: 1 + rng.index(4),
        activation: if rng.bernoulli(0.7) { Activation::Relu } else { Activation::Identity },
    };
    let (tr, tc) = layer.theta_shape();
    let mut store = ParamStore::new();
    store.insert("x", random(rng, lt.nodes() * batch, layer.in_dim, 1.0));
    store.insert("theta", random(rng, tr, tc, 1.0));
    let c = random(rng, lt.nodes() * batch, layer.out_dim, 1.0);
    let (_, tape) = layer.forward(&lt, store.value("x").ok()?, store.value("theta").ok()?).ok()?;
    if layer.activation == Activation::Relu && min_abs(tape.pre_activation()) < KINK_MARGIN {
        return None;
    }
    let (lt1, c1) = (lt.clone(), c.clone());
    Some(Case {
        store,
        value: Box::new(move |p| {
            let (out, _) = layer.forward(&lt1, p.value("x")?, p.value("theta")?)?;
            Ok(functional(&out, &c1))
        }),
        grads: Box::new(move |p| {
            let theta = p.value("theta")?;
            let (_, tape) = layer.forward(&lt, p.value("x")?, theta)?;
            let g = layer.backward(&lt, theta, &tape, &c)?;
            Ok(vec![("theta".into(), g.theta), ("x".into(), g.input)])
        }),
    })
}

fn cross_case(rng: &mut Rng) -> Option<Case> {
    let (b, d) = (1 + rng.index(3), 1 + rng.index(6));
    let mut store = ParamStore::new();
    for (name, r, c) in [("x0", b, d), ("xl", b, d), ("w", d, 1), ("b", 1, d)] {
        store.insert(name, random(rng, r, c, 1.0));
    }
    let c = random(rng, b, d, 1.0);
    let c1 = c.clone();
    Some(Case {
        store,
        value: Box::new(move |p| {
            let (out, _) = cross_layer(p.value("x0")?, p.value("xl")?, p.value("w")?, p.value("b")?)?;
            Ok(functional(&out, &c1))
        }),
        grads: Box::new(move |p| {
            let (x0, xl, w) = (p.value("x0")?, p.value("xl")?, p.value("w")?);
            let (_, dots) = cross_layer(x0, xl, w, p.value("b")?)?;
            let g = cross_layer_backward(x0, xl, w, &dots, &c)?;
            Ok(vec![("x0".into(), g.x0), ("xl".into(), g.xl), ("w".into(), g.w), ("b".into(), g.b)])
        }),
    })
}

fn deep_case(rng: &mut Rng) -> Option<Case> {
    let b = 1 + rng.index(3);
    let dims = [1 + rng.index(6), 1 + rng.index(5), 1 + rng.index(4)];
    let layers: Vec<Dense> = (0..2)
        .map(|l| Dense {
            in_dim: dims[l],
            out_dim: dims[l + 1],
            activation: Activation::Relu,
        })
        .collect();
    let mut store = ParamStore::new();
    store.insert("x", random(rng, b, dims[0], 1.0));
    for (l, layer) in layers.iter().enumerate() {
        store.insert(format!("w{l}"), random(rng, layer.in_dim, layer.out_dim, 1.0));
        store.insert(format!("b{l}"), random(rng, 1, layer.out_dim, 0.5));
    }
    let c = random(rng, b, dims[2], 1.0);
    let run = move |p: &ParamStore, layers: &[Dense]| -> Result<(Vec<Matrix>, Vec<Matrix>)> {
        let mut inputs = vec![p.value("x")?.clone()];
        let mut pres = Vec::new();
        for (l, layer) in layers.iter().enumerate() {
            let (out, pre) = layer.forward(&inputs[l], p.value(&format!("w{l}"))?, p.value(&format!("b{l}"))?)?;
            inputs.push(out);
            pres.push(pre);
        }
        Ok((inputs, pres))
    };
    let (_, pres) = run(&store, &layers).ok()?;
    if pres.iter().any(|pre| min_abs(pre) < KINK_MARGIN) {
        return None;
    }
    let (layers1, c1) = (layers.clone(), c.clone());
    Some(Case {
        store,
        value: Box::new(move |p| {
            let (inputs, _) = run(p, &layers1)?;
            Ok(functional(&inputs[2], &c1))
        }),
        grads: Box::new(move |p| {
            let (inputs, pres) = run(p, &layers)?;
            let mut d = c.clone();
            let mut grads = Grads::new();
            for l in (0..layers.len()).rev() {
                let g = layers[l].backward(&inputs[l], p.value(&format!("w{l}"))?, &pres[l], &d)?;
                grads.push((format!("w{l}"), g.w));
                grads.push((format!("b{l}"), g.b));
                d = g.input;
            }
            grads.push(("x".into(), d));
            Ok(grads)
        }),
    })
}

fn combine_case(rng: &mut Rng) -> Option<Case> {
    let (b, dc, dd, out) = (1 + rng.index(3), 1 + rng.index(5), 1 + rng.index(5), 1 + rng.index(4));
    let mut store = ParamStore::new();
    for (name, r, c) in [("cross", b, dc), ("deep", b, dd), ("w", dc + dd, out), ("b", 1, out)] {
        store.insert(name, random(rng, r, c, 1.0));
    }
    let c = random(rng, b, out, 1.0);
    let c1 = c.clone();
    Some(Case {
        store,
        value: Box::new(move |p| {
            let (y, _) = combine(p.value("cross")?, p.value("deep")?, p.value("w")?, p.value("b")?)?;
            Ok(functional(&y, &c1))
        }),
        grads: Box::new(move |p| {
            let w = p.value("w")?;
            let (y, joined) = combine(p.value("cross")?, p.value("deep")?, w, p.value("b")?)?;
            let layer = Dense {
                in_dim: dc + dd,
                out_dim: out,
                activation: Activation::Identity,
            };
            let g = layer.backward(&joined, w, &y, &c)?;
            Ok(vec![
                ("cross".into(), g.input.columns(0, dc)),
                ("deep".into(), g.input.columns(dc, dd)),
                ("w".into(), g.w),
                ("b".into(), g.b),
            ])
        }),
    })
}

fn embedding_case(rng: &mut Rng) -> Option<Case> {
    let (b, levels, e, dense) = (1 + rng.index(4), 1 + rng.index(3), 1 + rng.index(4), rng.index(4));
    let lv: Vec<usize> = (0..b).map(|_| rng.index(levels)).collect();
    let mut store = ParamStore::new();
    store.insert("table", random(rng, levels, e, 1.0));
    store.insert("dense", random(rng, b, dense, 1.0));
    let c = random(rng, b, e + dense, 1.0);
    let (lv1, c1) = (lv.clone(), c.clone());
    Some(Case {
        store,
        value: Box::new(move |p| {
            let x0 = embed_and_stack(&lv1, p.value("dense")?, p.value("table")?)?;
            Ok(functional(&x0, &c1))
        }),
        grads: Box::new(move |p| {
            let table = p.value("table")?;
            Ok(vec![
                ("table".into(), embed_backward(&lv, &c, table.shape())),
                ("dense".into(), c.columns(e, dense)),
            ])
        }),
    })
}

fn random_basis(rng: &mut Rng) -> SplineBasis {
    SplineBasis::uniform(1 + rng.index(3), rng.index(3)).expect("valid uniform basis")
}

fn varying_case(rng: &mut Rng) -> Option<Case> {
    let basis = random_basis(rng);
    let b = 1 + rng.index(4);
    let t: Vec<f64> = (0..b).map(|_| rng.uniform()).collect();
    let phi = basis_matrix(&basis, &t).ok()?;
    let hidden = VaryingLayer {
        in_dim: 1 + rng.index(4),
        out_dim: 1 + rng.index(4),
        activation: Activation::Relu,
    };
    let output = VaryingLayer {
        in_dim: hidden.out_dim,
        out_dim: 1,
        activation: Activation::Identity,
    };
    let mut store = ParamStore::new();
    store.insert("z", random(rng, b, hidden.in_dim, 1.0));
    let (r, c) = hidden.coef_shape(basis.len());
    store.insert("hidden", random(rng, r, c, 1.0));
    let (r, c) = output.coef_shape(basis.len());
    store.insert("out", random(rng, r, c, 1.0));
    let (_, tape) = hidden.forward(store.value("z").ok()?, &phi, store.value("hidden").ok()?).ok()?;
    if min_abs(tape.pre_activation()) < KINK_MARGIN {
        return None;
    }
    let c = random(rng, b, 1, 1.0);
    let (phi1, c1) = (phi.clone(), c.clone());
    Some(Case {
        store,
        value: Box::new(move |p| {
            let (h, _) = hidden.forward(p.value("z")?, &phi1, p.value("hidden")?)?;
            let (y, _) = output.forward(&h, &phi1, p.value("out")?)?;
            Ok(functional(&y, &c1))
        }),
        grads: Box::new(move |p| {
            let (hc, oc) = (p.value("hidden")?, p.value("out")?);
            let (h, th) = hidden.forward(p.value("z")?, &phi, hc)?;
            let (_, to) = output.forward(&h, &phi, oc)?;
            let go = output.backward(&phi, oc, &to, &c)?;
            let gh = hidden.backward(&phi, hc, &th, &go.input)?;
            Ok(vec![("out".into(), go.coef), ("hidden".into(), gh.coef), ("z".into(), gh.input)])
        }),
    })
}

fn density_case(rng: &mut Rng) -> Option<Case> {
    let (b, d, grid) = (1 + rng.index(4), 1 + rng.index(5), 2 + rng.index(10));
    let t: Vec<f64> = (0..b).map(|_| rng.uniform()).collect();
    let layer = Dense {
        in_dim: d,
        out_dim: grid + 1,
        activation: Activation::Identity,
    };
    let mut store = ParamStore::new();
    store.insert("z", random(rng, b, d, 1.0));
    store.insert("w", random(rng, d, grid + 1, 1.0));
    store.insert("b", random(rng, 1, grid + 1, 0.5));
    let t1 = t.clone();
    Some(Case {
        store,
        value: Box::new(move |p| {
            let (logits, _) = layer.forward(p.value("z")?, p.value("w")?, p.value("b")?)?;
            let mut total = 0.0;
            for (row, &tb) in t1.iter().enumerate() {
                total += density_nll(tb, logits.row(row))?.0;
            }
            Ok(total / t1.len() as f64)
        }),
        grads: Box::new(move |p| {
            let (z, w) = (p.value("z")?, p.value("w")?);
            let (logits, _) = layer.forward(z, w, p.value("b")?)?;
            let mut d = Matrix::zeros(logits.rows(), logits.cols());
            for (row, &tb) in t.iter().enumerate() {
                let (_, g) = density_nll(tb, logits.row(row))?;
                for (dst, v) in d.row_mut(row).iter_mut().zip(g) {
                    *dst = v / t.len() as f64;
                }
            }
            let g = layer.backward(z, w, &logits, &d)?;
            Ok(vec![("z".into(), g.input), ("w".into(), g.w), ("b".into(), g.b)])
        }),
    })
}

fn composite_case(rng: &mut Rng) -> Option<Case> {
    let demographics = Demographics::ALL[rng.index(3)];
    let degree = 1 + rng.index(3);
    let knots: Vec<f64> = {
        let k = rng.index(3);
        (1..=k).map(|i| i as f64 / (k + 1) as f64).collect()
    };
    let config = Config {
        cheb_order: 1 + rng.index(3),
        cheb_layers: 1 + rng.index(2),
        cheb_hidden: 2 + rng.index(2),
        sex_embed: 1 + rng.index(2),
        cross_layers: rng.index(3),
        deep_layers: 1 + rng.index(2),
        deep_hidden: 2 + rng.index(2),
        dcn_out: 1 + rng.index(3),
        vc_hidden: 2 + rng.index(2),
        grid_b: 2 + rng.index(4),
        spline_degree: degree,
        spline_knots: knots,
        beta: rng.uniform(),
        demographics,
        seed: rng.index(1 << 30) as u64,
        ..Config::default()
    };
    let nodes = 2 + rng.index(3);
    let graph = small_graph(rng, nodes + 1).ok()?;
    let subjects: Vec<SubjectRecord> = (0..2 + rng.index(4))
        .map(|_| SubjectRecord {
            roi_signals: (0..=nodes).map(|_| rng.uniform()).collect(),
            age: 75.0 + 7.0 * rng.normal(),
            sex: if rng.bernoulli(0.5) { "F".into() } else { "M".into() },
            mmse: 25.0 + 3.0 * rng.normal(),
            cdr: rng.uniform(),
            label: rng.bernoulli(0.5) as u8,
        })
        .collect();
    let mut ds = Dataset::new(graph.names().to_vec(), subjects).ok()?;
    let mut stats = NormStats::compute(&ds.subjects, ds.rois()).ok()?;
    stats.sex_levels = vec!["F".into(), "M".into()];
    ds.stats = Some(stats);
    let treatment = graph.names()[0].clone();
    let mut model = assemble(&graph, &treatment, &config).ok()?;
    model.attach_stats(&ds).ok()?;
    let names: Vec<String> = model.params.names().map(str::to_owned).collect();
    for name in names {
        for v in model.params.value_mut(&name).ok()?.as_mut_slice() {
            *v += 0.5 * rng.normal();
        }
    }
    let batch = model.prepare(&ds).ok()?;
    if model.network.relu_margin(&model.params, &batch).ok()? < KINK_MARGIN {
        return None;
    }
    let (fwd, _) = model.network.forward(&model.params, &batch).ok()?;
    if fwd.logits.iter().any(|l| l.abs() > CLAMP_LOGIT - 1.0) {
        return None;
    }
    let network = model.network.clone();
    let (n1, b1) = (network.clone(), batch.clone());
    Some(Case {
        store: model.params,
        value: Box::new(move |p| Objective { network: &n1, batch: &b1 }.value(p)),
        grads: Box::new(move |p| Ok(network.loss_and_grads(p, &batch)?.1)),
    })
}

fn tiny_gradient(case: &Case) -> Result<bool> {
    let floor = MIN_GRADIENT * (case.value)(&case.store)?.abs().max(1.0);
    for (_, g) in (case.grads)(&case.store)? {
        if g.as_slice().iter().any(|v| *v != 0.0 && v.abs() < floor) {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Checks `configs` admissible random configurations of one operation.
pub fn run_op(op: &str, seed: u64, configs: usize) -> Result<OpReport> {
    let op_index = OPS
        .iter()
        .position(|o| *o == op)
        .ok_or_else(|| Error::invalid(format!("unknown operation {op:?}")))?;
    let sampler: fn(&mut Rng) -> Option<Case> = match op_index {
        0 => cheb_case,
        1 => cross_case,
        2 => deep_case,
        3 => combine_case,
        4 => embedding_case,
        5 => varying_case,
        6 => density_case,
        _ => composite_case,
    };
    let mut rng = Rng::new(mix(seed ^ mix(op_index as u64 + 1)));
    let mut report = OpReport {
        op: op.to_string(),
        configs: 0,
        redrawn: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for _ in 0..configs {
        let mut attempts = 0;
        let case = loop {
            attempts += 1;
            if attempts > MAX_ATTEMPTS {
                return Err(Error::invalid(format!(
                    "{op}: no admissible configuration after {MAX_ATTEMPTS} draws"
                )));
            }
            match sampler(&mut rng) {
                Some(case) if !tiny_gradient(&case)? => break case,
                _ => report.redrawn += 1,
            }
        };
        let r = check_gradients(&case, &case.store, STEP, TOLERANCE)?;
        report.configs += 1;
        if let Some(w) = r.worst() {
            if w.max_rel_error > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = w.max_rel_error;
                report.worst = Some(w.clone());
            }
        }
    }
    Ok(report)
}

pub fn run(seed: u64, configs: usize) -> Result<SuiteReport> {
    Ok(SuiteReport {
        tol: TOLERANCE,
        ops: OPS.iter().map(|op| run_op(op, seed, configs)).collect::<Result<_>>()?,
    })
}
