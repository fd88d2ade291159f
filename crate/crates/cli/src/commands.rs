//! One function per experiment. Each returns the files to write, in order.

use nalgebra::DMatrix;
use nclab_core::data::{sample_gmm, GmmSpec, LabeledDataset};
use nclab_core::feasibility::{feasibility_sweep, nc_feasible_all, MeanLayout, SweepGrid};
use nclab_core::generalization::{
    analytic_error_bounds, error_lower_formula, margin_low_noise, margin_min_norm_report, monte_carlo_error,
    TwoNeuronClassifier,
};
use nclab_core::io::{self, fmt_f64, GeneralizationRow, Table};
use nclab_core::networks::{evaluate_checkpoint, sgd_train, NetShape, ShallowNet, TrainConfig};
use nclab_core::probes;
use nclab_core::random_features::{
    kernel_closed_form, kernel_monte_carlo, random_unit_columns, relu_feature_rank, Centering,
};
use nclab_core::upfm::{self, LossKind, RegularizationParams};
use nclab_core::RngStream;

use crate::config::{
    CenteringMode, GenParams, GenRegime, Layout, Loss, ProbeKind, ProbeParams, RfParams, SweepParams, TrainParams,
    UpfmParams,
};
use crate::error::CliError;

pub struct Output {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Output {
    fn table(name: &str, t: &Table) -> Self {
        Self { name: name.into(), bytes: t.to_csv_string().into_bytes() }
    }
}

/// Files produced so far, plus an error to report after they are written.
pub struct RunOutcome {
    pub outputs: Vec<Output>,
    pub failure: Option<CliError>,
}

impl From<Vec<Output>> for RunOutcome {
    fn from(outputs: Vec<Output>) -> Self {
        Self { outputs, failure: None }
    }
}

fn loss_kind(l: Loss) -> LossKind {
    match l {
        Loss::Ce => LossKind::CrossEntropy,
        Loss::L2 => LossKind::SquaredError,
    }
}

fn centering(c: CenteringMode) -> Centering {
    match c {
        CenteringMode::AnalyticReluMean => Centering::AnalyticReluMean,
        CenteringMode::RootTwoOverPi => Centering::RootTwoOverPi,
    }
}

fn layout(l: Layout, norm: f64) -> MeanLayout {
    match l {
        Layout::Antipodal => MeanLayout::Antipodal { norm },
        Layout::Axes => MeanLayout::Axes { norm },
    }
}

pub fn upfm_solve(p: &UpfmParams, seed: u64) -> Result<RunOutcome, CliError> {
    let reg = RegularizationParams::new(p.lambda_w, p.lambda_h)?;
    let dim = p.feature_dim.unwrap_or(p.classes + 2);
    let loss = loss_kind(p.loss);
    let sol = match loss {
        LossKind::CrossEntropy => upfm::ce_closed_form(p.n, p.classes, &reg, dim)?,
        LossKind::SquaredError => upfm::l2_closed_form(p.n, p.classes, &reg, dim)?,
    };
    let numeric = if p.numeric_check {
        Some(upfm::numeric_minimize(loss, p.n, p.classes, dim, &reg, RngStream::new(seed, 0), p.iters)?)
    } else {
        None
    };
    let kkt = if loss == LossKind::CrossEntropy && sol.a > 0.0 { Some(upfm::kkt_check_ce(&sol, &reg)?) } else { None };
    let nan = f64::NAN;
    let mut t = Table::new(&[
        "loss",
        "n",
        "K",
        "D",
        "lambda_w",
        "lambda_h",
        "a",
        "b",
        "objective",
        "numeric_objective",
        "kkt_min_eig",
        "kkt_sq_norm",
        "kkt_bv_inner",
    ]);
    t.push(vec![
        match p.loss {
            Loss::Ce => "ce".into(),
            Loss::L2 => "l2".into(),
        },
        p.n.to_string(),
        p.classes.to_string(),
        dim.to_string(),
        fmt_f64(p.lambda_w),
        fmt_f64(p.lambda_h),
        fmt_f64(sol.a),
        fmt_f64(sol.b),
        fmt_f64(sol.objective),
        fmt_f64(numeric.as_ref().map_or(nan, |m| m.objective)),
        fmt_f64(kkt.as_ref().map_or(nan, |k| k.psd_min_eig)),
        fmt_f64(kkt.as_ref().map_or(nan, |k| k.sq_norm)),
        fmt_f64(kkt.as_ref().map_or(nan, |k| k.bv_inner)),
    ]);
    Ok(vec![
        Output::table("upfm.csv", &t),
        Output::table("upfm_w.csv", &io::matrix_table(&sol.w)),
        Output::table("upfm_h.csv", &io::matrix_table(&sol.h)),
    ]
    .into())
}

pub fn feasibility(p: &SweepParams, seed: u64) -> Result<RunOutcome, CliError> {
    let d_values = p
        .d_over_n
        .iter()
        .map(|r| {
            let d = (r * p.n as f64).round();
            if !(d >= 1.0) {
                return Err(CliError::Config(format!("d/n = {r} gives no dimensions")));
            }
            Ok(d as usize)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let grid = SweepGrid {
        d_values,
        sigma_values: p.sigma.clone(),
        k: p.classes,
        n: p.n,
        layout: layout(p.layout, p.mean_norm),
        trials: p.trials,
        all_classes: p.all_classes,
        tol: p.tol,
        union_constant: p.union_constant,
    };
    let rows = feasibility_sweep(&grid, RngStream::new(seed, 0))?;
    Ok(vec![Output::table("sweep.csv", &io::sweep_table(&rows))].into())
}

fn mixture(classes: usize, d: usize, norm: f64, sigma: f64, n: usize) -> Result<GmmSpec, CliError> {
    let l = if classes == 2 { MeanLayout::Antipodal { norm } } else { MeanLayout::Axes { norm } };
    Ok(GmmSpec::new(l.means(classes, d)?, sigma, n)?)
}

pub fn train(p: &TrainParams, seed: u64) -> Result<RunOutcome, CliError> {
    let spec = mixture(p.classes, p.d, p.mean_norm, p.sigma, p.n)?;
    let data = sample_gmm(&spec, RngStream::new(seed, 1))?;
    let shape = NetShape { depth: p.depth, input_dim: p.d, hidden_dim: p.hidden_dim, feature_dim: p.feature_dim, classes: p.classes };
    let net = ShallowNet::init(shape, p.freeze_first_layer, RngStream::new(seed, 2))?;
    let cfg = TrainConfig {
        loss: loss_kind(p.loss),
        lambda_w: p.lambda_w,
        lambda_h: p.lambda_h,
        lr0: p.lr0,
        decay_at: p.decay_at,
        epochs: p.epochs.max(1),
        batch: p.batch,
        freeze_first_layer: p.freeze_first_layer,
        seed,
    };
    cfg.validate()?;
    let (net, trajectory, objectives, aborted) = if p.epochs == 0 {
        let c = evaluate_checkpoint(&net, &data, &cfg, 0)?;
        (net, vec![c], vec![], None)
    } else {
        let r = sgd_train(net, &data, &cfg, &p.extra_checkpoints)?;
        (r.net, r.trajectory, r.epoch_objectives, r.aborted)
    };
    let mut obj = Table::new(&["epoch", "objective"]);
    for (i, v) in objectives.iter().enumerate() {
        obj.push(vec![(i + 1).to_string(), fmt_f64(*v)]);
    }
    let mut outputs = vec![Output::table("trajectory.csv", &io::trajectory_table(&trajectory)), Output::table("epoch_objectives.csv", &obj)];
    if p.save_weights {
        let mut bytes = Vec::new();
        io::write_weights(&net, &mut bytes)?;
        outputs.push(Output { name: "weights.bin".into(), bytes });
    }
    Ok(RunOutcome { outputs, failure: aborted.map(|m| CliError::Numerical(format!("training aborted at {m}"))) })
}

fn split_classes(x: DMatrix<f64>, classes: usize) -> Result<LabeledDataset, CliError> {
    let total = x.ncols();
    if classes < 2 || total % classes != 0 {
        return Err(CliError::Config(format!("{total} points do not split into {classes} equal classes")));
    }
    Ok(LabeledDataset::new(x, classes, total / classes)?)
}

pub fn rf_rank(p: &RfParams, seed: u64) -> Result<RunOutcome, CliError> {
    if p.points < 2 || p.trials == 0 {
        return Err(CliError::Config("need at least two points and one trial".into()));
    }
    let nf = p.points as f64;
    let d1 = p.d1.unwrap_or((8.0 * nf * nf.ln()).ceil() as usize);
    let x = random_unit_columns(p.input_dim, p.points, RngStream::new(seed, 0));
    let c = centering(p.centering);
    let kernel = kernel_closed_form(&x, c)?;
    let lmin = nclab_core::linalg::sym_min_eigenvalue(&kernel);
    let mut kt = io::kernel_table(&kernel, c, None);
    kt.comments.push(format!("lambda_min={}", fmt_f64(lmin)));
    let mut outputs = vec![Output::table("kernel.csv", &kt)];
    if let Some(m) = p.kernel_samples {
        let est = kernel_monte_carlo(&x, m, c, RngStream::new(seed, 1))?;
        let mut t = io::kernel_table(&est.h_hat, c, Some(m));
        t.comments.push(format!("lambda_min={}", fmt_f64(est.lambda_min_hat)));
        outputs.push(Output::table("kernel_mc.csv", &t));
    }
    let mut t = Table::new(io::RANK_HEADER);
    let stream = RngStream::new(seed, 2);
    for trial in 0..p.trials {
        let (rep, features) = relu_feature_rank(&x, d1, stream.child(trial as u64), p.tol)?;
        let full = rep.rank == p.points.min(d1);
        let feasible = nc_feasible_all(&split_classes(features, p.classes)?, 1e-9)?.overall;
        t.push(vec![
            p.points.to_string(),
            p.input_dim.to_string(),
            d1.to_string(),
            trial.to_string(),
            rep.rank.to_string(),
            u8::from(full).to_string(),
            fmt_f64(rep.sigma_min),
            fmt_f64(rep.sigma_max),
            u8::from(feasible).to_string(),
        ]);
    }
    outputs.insert(0, Output::table("rank.csv", &t));
    Ok(outputs.into())
}

/// `upper_error` is the analytic upper bracket of the constructed classifier.
/// `lower_error` is its analytic lower bracket in the low-noise regime and the
/// closed-form bound over all collapsed classifiers in the wide regime.
pub fn gen_analysis(p: &GenParams, seed: u64) -> Result<RunOutcome, CliError> {
    if p.trials == 0 {
        return Err(CliError::Config("need at least one trial".into()));
    }
    let spec = GmmSpec::antipodal(p.d, p.mean_norm, p.sigma_over_mu * p.mean_norm, p.n)?;
    let formula = error_lower_formula(p.sigma_over_mu, p.n, p.d, p.c1, p.c2)?.value;
    let (data_stream, mc_stream) = (RngStream::new(seed, 10), RngStream::new(seed, 11));
    let mut rows = Vec::with_capacity(p.trials);
    for t in 0..p.trials as u64 {
        let data = sample_gmm(&spec, data_stream.child(t))?;
        let (r0, r1) = match p.regime {
            GenRegime::LowNoise => (margin_low_noise(&data, &spec, 0, p.tol)?, margin_low_noise(&data, &spec, 1, p.tol)?),
            GenRegime::MinNorm => {
                (margin_min_norm_report(&data, &spec, 0, p.tol)?, margin_min_norm_report(&data, &spec, 1, p.tol)?)
            }
        };
        let clf = TwoNeuronClassifier::from_reports(&r0, &r1)?;
        let (lo, hi) = analytic_error_bounds(&clf, &spec)?;
        let mc = monte_carlo_error(&clf, &spec, p.mc_trials, mc_stream.child(t))?;
        rows.push(GeneralizationRow {
            n: p.n,
            d: p.d,
            sigma_over_mu: p.sigma_over_mu,
            f_star: r0.f_star.min(r1.f_star),
            upper_error: hi,
            lower_error: if p.regime == GenRegime::MinNorm { formula } else { lo },
            mc_error: mc.error,
            mc_ci: mc.ci,
        });
    }
    Ok(vec![Output::table("generalization.csv", &io::generalization_table(&rows))].into())
}

pub fn probe(p: &ProbeParams, seed: u64) -> Result<RunOutcome, CliError> {
    let want = |k: ProbeKind| p.kind == k || p.kind == ProbeKind::All;
    let mut reports = Vec::new();
    if want(ProbeKind::JlAngle) {
        reports.push(probes::jl_angle_probe(p.d, p.m, p.epsilon, p.trials, RngStream::new(seed, 21))?);
    }
    if want(ProbeKind::JlSingular) {
        let pi = nclab_core::linalg::gaussian_matrix(p.rows, p.d, &mut RngStream::new(seed, 20).generator());
        reports.push(probes::jl_singular_probe(&pi, p.m, p.epsilon, p.trials, RngStream::new(seed, 22))?);
    }
    if want(ProbeKind::Gordon) {
        reports.push(probes::gordon_probe(p.n, p.gordon_d, p.trials, RngStream::new(seed, 23))?);
    }
    if want(ProbeKind::Lipschitz) {
        let r = probes::lipschitz_concentration_probe(p.n, p.gordon_d, p.trials, &p.thresholds, RngStream::new(seed, 24))?;
        reports.extend(r.tails);
    }
    Ok(vec![Output::table("probes.csv", &io::probe_table(&reports))].into())
}
