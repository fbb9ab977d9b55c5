use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};

use soltype_core::boxpath::{half_spaces, rho, BoxPath, BoxSegment};
use soltype_core::distortion::uniform_certificate;
use soltype_core::harness::report::{to_csv, Plot, Series};
use soltype_core::harness::{
    compare_metrics, delta_vs_empirical, estimate_distance, optimize_path, rho_vs_distance, OptimizerSettings, PairKind,
    SampleSpec,
};
use soltype_core::hsv_pipeline::{compute_constants, make_hsv, replay, AuditTrail, PipelineConstants, PipelineError};
use soltype_core::qi_maps::{test_rough_isometry, ProductQI, QiSpec};
use soltype_core::{validate, GroupElement, GroupSpec, MetricSpec, PiecewisePath, SolTypeGroup, SplitMetric};

use crate::output::Artifacts;
use crate::{Cli, CliError, Command, Common, Pair};

/// Optimizer settings for the geodesic fed to surgery-demo.
const DEMO_REFINE_TOL: f64 = 0.005;

pub fn run(cli: &Cli) -> Result<String, CliError> {
    let c = &cli.common;
    match &cli.command {
        Command::Validate => validate_cmd(c),
        Command::Halfspaces(pair) => halfspaces_cmd(c, pair),
        Command::Rho(pair) => rho_cmd(c, pair),
        Command::Geodesic(pair) => geodesic_cmd(c, pair),
        Command::CompareMetrics => compare_cmd(c),
        Command::RhoVsD => rho_vs_d_cmd(c),
        Command::Delta => delta_cmd(c),
        Command::QiTest => qi_cmd(c),
        Command::SurgeryDemo { pair, r } => surgery_cmd(c, pair, *r),
        Command::Replay { audit } => replay_cmd(c, audit),
    }
}

fn load_group(c: &Common) -> Result<(SolTypeGroup, soltype_core::group::ValidationReport), CliError> {
    let path = c.group.as_ref().ok_or_else(|| CliError::Usage("--group is required".into()))?;
    Ok(validate(&GroupSpec::load(path)?)?)
}

fn load_metric(group: &SolTypeGroup, path: Option<&std::path::PathBuf>, flag: &str) -> Result<SplitMetric, CliError> {
    let path = path.ok_or_else(|| CliError::Usage(format!("--{flag} is required")))?;
    Ok(SplitMetric::from_spec(group, &MetricSpec::load(path)?)?)
}

fn parse_element(group: &SolTypeGroup, text: &str) -> Result<GroupElement, CliError> {
    let g: GroupElement = serde_json::from_str(text)?;
    group.check_element(&g)?;
    Ok(g)
}

/// `(p, q)` in standard and in split coordinates.
fn load_pair(group: &SolTypeGroup, metric: &SplitMetric, pair: &Pair) -> Result<[GroupElement; 4], CliError> {
    let p = match &pair.p {
        Some(t) => parse_element(group, t)?,
        None => group.identity(),
    };
    let q = parse_element(group, &pair.q)?;
    let (ps, qs) = (metric.to_split(&p), metric.to_split(&q));
    Ok([p, q, ps, qs])
}

fn sample_spec(c: &Common, kinds: Vec<PairKind>) -> SampleSpec {
    SampleSpec {
        pairs_per_separation: c.pairs,
        separations: c.separations.clone(),
        seed: c.seed,
        kinds,
    }
}

fn join(v: impl IntoIterator<Item = f64>) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn nil_field(g: &GroupElement) -> String {
    g.nil.iter().map(|h| join(h.iter().copied())).collect::<Vec<_>>().join("|")
}

fn xy(v: &DVector<f64>) -> (f64, f64) {
    (v[0], v.get(1).copied().unwrap_or(0.0))
}

/// One vertex of a dumped path. `base` is `;`-separated; `nil` separates
/// factors with `|` and coordinates with `;`.
#[derive(Serialize)]
struct PathRow {
    segment: usize,
    kind: &'static str,
    factor: Option<usize>,
    cost: Option<f64>,
    vertex: usize,
    base: String,
    nil: String,
}

fn box_path_rows(path: &BoxPath) -> Vec<PathRow> {
    let mut rows = Vec::new();
    let mut push = |segment, kind, factor, cost, g: &GroupElement| {
        rows.push(PathRow {
            segment,
            kind,
            factor,
            cost,
            vertex: rows.len(),
            base: join(g.base.iter().copied()),
            nil: nil_field(g),
        })
    };
    if path.segments.is_empty() {
        push(0, "base", None, None, &path.start);
    }
    for (k, s) in path.segments.iter().enumerate() {
        match s {
            BoxSegment::Base { nodes } => nodes.iter().for_each(|g| push(k, "base", None, None, g)),
            BoxSegment::Jump { factor, from, to, cost } => {
                push(k, "jump", Some(*factor), Some(*cost), from);
                push(k, "jump", Some(*factor), Some(*cost), to);
            }
        }
    }
    rows
}

fn node_rows(path: &PiecewisePath) -> Vec<PathRow> {
    path.nodes
        .iter()
        .enumerate()
        .map(|(k, g)| PathRow {
            segment: k.saturating_sub(1),
            kind: "node",
            factor: None,
            cost: None,
            vertex: k,
            base: join(g.base.iter().copied()),
            nil: nil_field(g),
        })
        .collect()
}

fn plot(title: &str, x: &str, y: &str, series: Vec<Series>, fit: Option<(f64, f64)>) -> String {
    Plot {
        title: title.into(),
        x_label: x.into(),
        y_label: y.into(),
        series,
        fit,
    }
    .to_svg()
}

fn series(name: &str, points: Vec<(f64, f64)>) -> Series {
    Series {
        name: name.into(),
        points,
    }
}

/// Write CSV and SVG, then the summary listing both, and return the summary.
fn emit(c: &Common, command: &str, csv: &str, svg: &str, extra: &[(&str, String)], mut summary: Value) -> Result<String, CliError> {
    let mut out = Artifacts::new(&c.out, command, c.seed)?;
    out.write(".csv", csv)?;
    out.write(".svg", svg)?;
    for (suffix, text) in extra {
        out.write(suffix, text)?;
    }
    summary["command"] = json!(command);
    summary["seed"] = json!(c.seed);
    summary["files"] = json!(out.written());
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    let name = out.write(".json", &text)?;
    Ok(format!("{}\n{}", c.out.join(name).display(), text.trim_end()))
}

fn validate_cmd(c: &Common) -> Result<String, CliError> {
    let (group, report) = load_group(c)?;
    #[derive(Serialize)]
    struct Row {
        factor: usize,
        dim: usize,
        step: usize,
        normalization: f64,
        root: String,
        eigenvalues: String,
        derivation_residual: f64,
        jacobi_residual: f64,
    }
    let rows: Vec<Row> = report
        .factors
        .iter()
        .enumerate()
        .map(|(i, f)| Row {
            factor: i,
            dim: f.dim,
            step: f.step,
            normalization: f.normalization,
            root: join(group.root(i).iter().copied()),
            eigenvalues: f.eigenvalues.iter().map(|(re, im)| format!("{re}{im:+}i")).collect::<Vec<_>>().join(";"),
            derivation_residual: f.derivation_residual,
            jacobi_residual: f.jacobi_residual,
        })
        .collect();
    let mut summary = json!({ "status": "OK", "normalized": report.normalized, "factors": report.factors });
    if let Some(path) = &c.metric {
        let metric = load_metric(&group, Some(path), "metric")?;
        let cert = uniform_certificate(&metric)?;
        summary["metric"] = json!({
            "splitting": metric.splitting(),
            "block_diagonal": metric.is_block_diagonal(),
            "gradients": metric.gradient_field(),
            "l1": metric.l1(),
            "certificate": { "c": cert.c, "t": cert.t, "a": cert.a, "factors": cert.factors },
        });
    }
    let roots = (0..group.n_factors()).map(|i| xy(group.root(i))).collect();
    let svg = plot("roots", "α(e₁)", "α(e₂)", vec![series("roots", roots)], None);
    emit(c, "validate", &to_csv(&rows)?, &svg, &[], summary)
}

fn halfspaces_cmd(c: &Common, pair: &Pair) -> Result<String, CliError> {
    let (group, _) = load_group(c)?;
    let metric = load_metric(&group, c.metric.as_ref(), "metric")?;
    let [p, q, ps, qs] = load_pair(&group, &metric, pair)?;
    let hs = half_spaces(&ps, &qs, &metric)?;
    #[derive(Serialize)]
    struct Row {
        factor: usize,
        threshold: Option<f64>,
        normal: String,
        magnitude: f64,
        exact: bool,
    }
    let rows: Vec<Row> = hs
        .half_spaces
        .iter()
        .map(|h| Row {
            factor: h.factor,
            threshold: h.threshold,
            normal: join(h.normal.iter().copied()),
            magnitude: h.magnitude,
            exact: h.exact,
        })
        .collect();
    // Closest boundary point of each half-space, relative to p.
    let points = hs
        .half_spaces
        .iter()
        .filter_map(|h| {
            let t = h.threshold?;
            let n = DVector::from_vec(h.normal.clone());
            Some(xy(&(&n * (t / n.norm_squared()))))
        })
        .collect();
    let target = xy(&(&qs.base - &ps.base));
    let svg = plot(
        "half-space boundary points",
        "v₁",
        "v₂",
        vec![series("boundary", points), series("p, q", vec![(0.0, 0.0), target])],
        None,
    );
    let summary = json!({ "p": p, "q": q, "half_spaces": hs });
    emit(c, "halfspaces", &to_csv(&rows)?, &svg, &[], summary)
}

fn rho_cmd(c: &Common, pair: &Pair) -> Result<String, CliError> {
    let (group, _) = load_group(c)?;
    let metric = load_metric(&group, c.metric.as_ref(), "metric")?;
    let [p, q, ps, qs] = load_pair(&group, &metric, pair)?;
    let r = rho(&ps, &qs, &metric)?;
    let vertices = r.path.base_vertices().iter().map(xy).collect();
    let svg = plot("box geodesic (base projection)", "v₁", "v₂", vec![series("box path", vertices)], None);
    let summary = json!({
        "p": p,
        "q": q,
        "rho": r.length,
        "base_length": r.base_length,
        "jump_cost": r.jump_cost,
        "lower_bound": r.lower_bound,
        "order": r.order,
        "orderings_tried": r.orderings_tried,
        "exhaustive": r.exhaustive,
        "exact": r.exact,
    });
    emit(c, "rho", &to_csv(&box_path_rows(&r.path))?, &svg, &[], summary)
}

fn geodesic_cmd(c: &Common, pair: &Pair) -> Result<String, CliError> {
    let (group, _) = load_group(c)?;
    let metric = load_metric(&group, c.metric.as_ref(), "metric")?;
    let [p, q, ps, qs] = load_pair(&group, &metric, pair)?;
    let e = estimate_distance(&ps, &qs, &metric, &OptimizerSettings::default(), c.budget)?;
    let points = e.path.nodes.iter().map(|g| xy(&g.base)).collect();
    let svg = plot("optimized path (base projection)", "v₁", "v₂", vec![series("path", points)], None);
    let summary = json!({
        "p": p,
        "q": q,
        "upper": e.upper,
        "lower": e.lower,
        "method": e.method,
        "levels": e.levels,
        "iterations": e.iterations,
        "converged": e.converged,
        "budget_exceeded": e.budget_exceeded,
    });
    emit(c, "geodesic", &to_csv(&node_rows(&e.path))?, &svg, &[], summary)
}

fn compare_cmd(c: &Common) -> Result<String, CliError> {
    let (group, _) = load_group(c)?;
    let m1 = load_metric(&group, c.metric.as_ref(), "metric")?;
    let m2 = load_metric(&group, c.metric2.as_ref(), "metric2")?;
    let r = compare_metrics(&m1, &m2, &sample_spec(c, vec![PairKind::Mixed]), &OptimizerSettings::default(), c.budget)?;
    let fit = r.fit("stretch").map(|f| (f.slope_upper, 0.0));
    let up = r.rows.iter().map(|x| (x.separation, x.residual_upper_stretch)).collect();
    let lo = r.rows.iter().map(|x| (x.separation, x.residual_lower_stretch)).collect();
    let svg = plot(
        "residuals vs separation (stretch factors)",
        "separation",
        "residual",
        vec![series("(d₂ − λ₁d₁)⁺", up), series("(λₖd₁ − d₂)⁺", lo)],
        fit,
    );
    let summary = json!({
        "eigenvalues": r.eigenvalues,
        "stretch_factors": r.stretch_factors,
        "fits": r.fits,
        "bounded": r.fits.iter().map(|f| (f.convention.clone(), f.bounded())).collect::<Vec<_>>(),
        "max_separation": r.max_separation,
        "consistent": r.consistent,
    });
    emit(c, "compare-metrics", &to_csv(&r.rows)?, &svg, &[], summary)
}

fn rho_vs_d_cmd(c: &Common) -> Result<String, CliError> {
    let (group, _) = load_group(c)?;
    let metric = load_metric(&group, c.metric.as_ref(), "metric")?;
    let r = rho_vs_distance(&metric, &sample_spec(c, vec![PairKind::Mixed]), &OptimizerSettings::default(), c.budget)?;
    let gaps = r.rows.iter().map(|x| (x.separation, x.gap_upper)).collect();
    let svg = plot("ρ − d̂ vs separation", "separation", "ρ − d̂", vec![series("ρ − d̂ upper", gaps)], Some((r.slope, r.intercept)));
    let summary = json!({
        "slope": r.slope,
        "intercept": r.intercept,
        "min_gap": r.min_gap,
        "max_gap": r.max_gap,
        "above_lower": r.above_lower,
        "bounded": r.bounded(),
    });
    emit(c, "rho-vs-d", &to_csv(&r.rows)?, &svg, &[], summary)
}

fn delta_cmd(c: &Common) -> Result<String, CliError> {
    let (group, _) = load_group(c)?;
    let m1 = load_metric(&group, c.metric.as_ref(), "metric")?;
    let m2 = load_metric(&group, c.metric2.as_ref(), "metric2")?;
    let spec = sample_spec(c, vec![PairKind::Base, PairKind::Mixed]);
    let r = delta_vs_empirical(&m1, &m2, &spec, &OptimizerSettings::default(), c.budget)?;
    let ratios = r.rows.iter().map(|x| (x.separation, x.ratio)).collect();
    let svg = plot("d̂₂ / d̂₁ vs separation", "separation", "ratio", vec![series("ratio", ratios)], None);
    let summary = json!({
        "closed_form": r.closed_form,
        "empirical": r.empirical,
        "relative_discrepancy": r.relative_discrepancy,
    });
    emit(c, "delta", &to_csv(&r.rows)?, &svg, &[], summary)
}

fn qi_cmd(c: &Common) -> Result<String, CliError> {
    let (group, _) = load_group(c)?;
    let metric = load_metric(&group, c.metric.as_ref(), "metric")?;
    let path = c.qi.as_ref().ok_or_else(|| CliError::Usage("--qi is required".into()))?;
    let qi = ProductQI::from_spec(&group, &QiSpec::load(path)?)?;
    let r = test_rough_isometry(&qi, &metric, &sample_spec(c, vec![PairKind::Mixed]), &OptimizerSettings::default(), c.budget)?;
    let all: Vec<Series> = r
        .series
        .iter()
        .map(|s| series(&s.name, r.rows.iter().filter(|x| x.series == s.name).map(|x| (x.separation, x.difference)).collect()))
        .collect();
    let shown = r.witness.as_ref().map(|w| w.series.clone()).unwrap_or_else(|| "random".into());
    let fit = r.series(&shown).map(|s| (s.slope, s.intercept));
    let svg = plot("|d̂(f p, f q) − d̂(p, q)| vs separation", "separation", "difference", all, fit);
    let summary = json!({
        "verdict": r.verdict,
        "witness": r.witness,
        "series": r.series,
        "max_relative": r.max_relative,
    });
    emit(c, "qi-test", &to_csv(&r.rows)?, &svg, &[], summary)
}

fn surgery_cmd(c: &Common, pair: &Pair, r: Option<f64>) -> Result<String, CliError> {
    let (group, _) = load_group(c)?;
    let metric = load_metric(&group, c.metric.as_ref(), "metric")?;
    let [p, q, ps, qs] = load_pair(&group, &metric, pair)?;
    let cert = uniform_certificate(&metric)?;
    let constants = match r {
        None => compute_constants(&metric, &cert)?,
        Some(r) => {
            let base = compute_constants(&metric, &cert)?;
            PipelineConstants::with_r(base.n, base.c, base.a, base.t, base.epsilon, base.l1, r)
        }
    };
    let init = rho(&ps, &qs, &metric)?.path.to_path();
    let settings = OptimizerSettings {
        refine_tol: DEMO_REFINE_TOL,
        ..OptimizerSettings::default()
    };
    let gamma = optimize_path(&metric, &init, &settings, c.budget);
    let result = make_hsv(&gamma.path, &ps, &qs, &metric, &constants);
    let input: Vec<(f64, f64)> = gamma.path.nodes.iter().map(|g| xy(&g.base)).collect();
    match result {
        Ok(h) => {
            let output = h.path.base_vertices().iter().map(xy).collect();
            let svg = plot(
                "HSV box path (base projection)",
                "v₁",
                "v₂",
                vec![series("input geodesic", input), series("output", output)],
                None,
            );
            let summary = json!({
                "p": p,
                "q": q,
                "certified": true,
                "input_length": h.input_length,
                "length": h.length,
                "bound": h.bound,
                "constants": constants,
                "geodesic_levels": gamma.levels,
            });
            let audit = h.audit.to_json();
            emit(c, "surgery-demo", &to_csv(&box_path_rows(&h.path))?, &svg, &[(".audit.json", audit)], summary)
        }
        Err(e @ PipelineError::CertificationFailure { .. }) => {
            let svg = plot("input geodesic (base projection)", "v₁", "v₂", vec![series("input geodesic", input)], None);
            let summary = json!({
                "p": p,
                "q": q,
                "certified": false,
                "failure": e.to_string(),
                "constants": constants,
                "geodesic_levels": gamma.levels,
            });
            emit(c, "surgery-demo", &to_csv(&node_rows(&gamma.path))?, &svg, &[], summary)?;
            Err(e.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn replay_cmd(c: &Common, audit: &std::path::Path) -> Result<String, CliError> {
    let trail = AuditTrail::from_json(&std::fs::read_to_string(audit)?)?;
    let path = replay(&trail)?;
    let output = path.base_vertices().iter().map(xy).collect();
    let svg = plot("replayed box path (base projection)", "v₁", "v₂", vec![series("output", output)], None);
    let summary = json!({ "audit": audit.display().to_string(), "matches": true, "output_length": trail.output_length });
    emit(c, "replay", &to_csv(&box_path_rows(&path))?, &svg, &[], summary)
}
