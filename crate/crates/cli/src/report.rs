//! Run report: every command collects its numeric payload here, then the
//! report is rendered either as human-readable text or as one JSON object.

use serde::Serialize;

use scm_core::contraction::InterventionContraction;
use scm_core::intervention::CompositionBoundReport;
use scm_core::{ContractionCertificate, LinearMoments, Matrix, SolveReport, TailCheckReport};

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub args: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_digest: Option<String>,
    pub seed: u64,
    pub elapsed_ms: f64,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<ContractionCertificate>,
    /// Certification verdict: yes, no, or unknown.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simple: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolvePayload>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moments: Option<MomentsPayload>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intervention: Option<InterventionPayload>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterfactual: Option<CounterfactualPayload>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<SamplesPayload>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tailcheck: Option<TailCheckPayload>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub composition: Option<CompositionPayload>,
}

impl RunReport {
    pub fn new(command: &str, args: Vec<String>, seed: u64) -> RunReport {
        RunReport {
            command: command.to_string(),
            args,
            model_digest: None,
            seed,
            elapsed_ms: 0.0,
            exit_code: 0,
            certificate: None,
            simple: None,
            hint: None,
            solve: None,
            moments: None,
            intervention: None,
            counterfactual: None,
            samples: None,
            tailcheck: None,
            composition: None,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SolvePayload {
    pub variables: Vec<String>,
    #[serde(flatten)]
    pub report: SolveReport,
}

#[derive(Debug, Serialize)]
pub struct MomentsPayload {
    pub variables: Vec<String>,
    pub mean: Vec<f64>,
    pub covariance: Matrix,
    /// Pairwise correlation of the first two coordinates, when defined.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation: Option<f64>,
}

impl MomentsPayload {
    pub fn from_moments(variables: Vec<String>, moments: &LinearMoments) -> MomentsPayload {
        let correlation = (variables.len() >= 2).then(|| moments.correlation(0, 1));
        MomentsPayload {
            variables,
            mean: moments.mean.clone(),
            covariance: moments.covariance.clone(),
            correlation,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ComposedTarget {
    pub variable: String,
    pub scale: f64,
    pub shift: f64,
}

#[derive(Debug, Serialize)]
pub struct InterventionPayload {
    pub composed: Vec<ComposedTarget>,
    pub a_max: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contraction: Option<InterventionContraction>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_path: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct CounterfactualPayload {
    pub variables: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observation: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abducted_noise: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub point: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_matrix: Option<Matrix>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_offset: Option<Vec<f64>>,
    /// Monte Carlo joint moments over the stacked (x, x') coordinates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub joint: Option<SamplesPayload>,
}

#[derive(Debug, Serialize)]
pub struct SamplesPayload {
    pub n: usize,
    pub columns: Vec<String>,
    pub mean: Vec<f64>,
    pub covariance: Matrix,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_path: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct TailCheckPayload {
    pub functional: String,
    pub spec_kappa: f64,
    pub spec_sigma2: f64,
    pub proxy: f64,
    #[serde(flatten)]
    pub report: TailCheckReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_path: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct CompositionPayload {
    pub composed: Vec<ComposedTarget>,
    #[serde(flatten)]
    pub bound: CompositionBoundReport,
}

fn print_vector(label: &str, names: &[String], values: &[f64]) {
    println!("{label}:");
    for (name, value) in names.iter().zip(values) {
        println!("  {name:<12} {value}");
    }
}

fn print_matrix(label: &str, matrix: &Matrix) {
    println!("{label}:");
    for i in 0..matrix.rows() {
        let row: Vec<String> = matrix.row(i).iter().map(|v| format!("{v:>12.6}")).collect();
        println!("  {}", row.join(" "));
    }
}

/// Plain-text rendering of a report; the JSON mode bypasses this entirely.
pub fn render_human(report: &RunReport) {
    if let Some(cert) = &report.certificate {
        println!("certificate:");
        println!("  p            {}", cert.p);
        println!("  kappa        {}", cert.kappa);
        println!("  method       {}", cert.method.as_str());
        println!(
            "  certified    {}",
            if cert.is_certified { "yes" } else { "no" }
        );
        if let Some(f) = cert.frobenius_bound {
            println!("  frobenius    {f}");
        }
    }
    if let Some(simple) = &report.simple {
        println!("simple: {simple}");
    }
    if let Some(hint) = &report.hint {
        println!("hint: {hint}");
    }
    if let Some(solve) = &report.solve {
        print_vector("fixed point", &solve.variables, &solve.report.x_star);
        println!("iterations: {}", solve.report.iterations);
        println!("residual: {:e}", solve.report.residual);
    }
    if let Some(moments) = &report.moments {
        print_vector("mean", &moments.variables, &moments.mean);
        print_matrix("covariance", &moments.covariance);
        if let Some(rho) = moments.correlation {
            println!("correlation: {rho:.6}");
        }
    }
    if let Some(iv) = &report.intervention {
        println!("composed intervention:");
        for t in &iv.composed {
            println!(
                "  {:<12} scale {:<22} shift {}",
                t.variable, t.scale, t.shift
            );
        }
        println!("a_max: {}", iv.a_max);
        if let Some(c) = &iv.contraction {
            let status = if c.scaled {
                "scaled by a_max"
            } else {
                "preserved"
            };
            println!(
                "kappa after intervention: {} ({status}), simple guaranteed: {}",
                c.certificate.kappa,
                if c.simple_guaranteed { "yes" } else { "no" }
            );
        }
        if let Some(path) = &iv.out_path {
            println!("wrote intervened model to {path}");
        }
    }
    if let Some(cf) = &report.counterfactual {
        if let (Some(obs), Some(noise)) = (&cf.observation, &cf.abducted_noise) {
            print_vector("observation", &cf.variables, obs);
            let noise_names: Vec<String> = cf.variables.iter().map(|v| format!("e_{v}")).collect();
            print_vector("abducted noise", &noise_names, noise);
        }
        if let Some(point) = &cf.point {
            let primed: Vec<String> = cf.variables.iter().map(|v| format!("{v}'")).collect();
            print_vector("counterfactual", &primed, point);
        }
        if let (Some(matrix), Some(offset)) = (&cf.map_matrix, &cf.map_offset) {
            println!("response map:");
            for (i, variable) in cf.variables.iter().enumerate() {
                let terms: Vec<String> = cf
                    .variables
                    .iter()
                    .enumerate()
                    .map(|(j, v)| format!("{:+.6}*{v}", matrix.get(i, j)))
                    .collect();
                println!("  {}' = {} {:+.6}", variable, terms.join(" "), offset[i]);
            }
        }
        if let Some(joint) = &cf.joint {
            println!("monte carlo joint moments over {} samples:", joint.n);
            print_vector("mean", &joint.columns, &joint.mean);
            print_matrix("covariance", &joint.covariance);
        }
    }
    if let Some(samples) = &report.samples {
        if let Some(path) = &samples.out_path {
            println!("wrote {} rows to {path}", samples.n);
        }
        print_vector("sample mean", &samples.columns, &samples.mean);
        print_matrix("sample covariance", &samples.covariance);
    }
    if let Some(tc) = &report.tailcheck {
        println!(
            "tail check: h = {}, kappa = {}, sigma2 = {}, proxy = {:.6}, n = {}, seed = {}",
            tc.functional, tc.spec_kappa, tc.spec_sigma2, tc.proxy, tc.report.n, tc.report.seed
        );
        println!(
            "  {:>8} {:>12} {:>12} {:>12} {:>6}",
            "t", "empirical", "bound", "slack", "pass"
        );
        for row in &tc.report.rows {
            println!(
                "  {:>8} {:>12.6} {:>12.6} {:>12.6} {:>6}",
                row.t,
                row.empirical,
                row.bound,
                row.slack,
                if row.pass { "yes" } else { "NO" }
            );
        }
        if let Some(path) = &tc.out_path {
            println!("wrote tail curve to {path}");
        }
        println!("result: {}", if tc.report.passed { "PASS" } else { "FAIL" });
    }
    if let Some(comp) = &report.composition {
        println!("composed intervention:");
        for t in &comp.composed {
            println!(
                "  {:<12} scale {:<22} shift {}",
                t.variable, t.scale, t.shift
            );
        }
        println!(
            "all stage scales within unit bound: {}",
            if comp.bound.all_stages_bounded {
                "yes"
            } else {
                "no"
            }
        );
        println!(
            "contraction-preservation guarantee applies: {}",
            if comp.bound.guarantee_applies {
                "yes"
            } else {
                "no (check the kappa-max criterion instead)"
            }
        );
    }
}
