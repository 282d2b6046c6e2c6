//! Command implementations. Each handler loads its inputs, delegates to the
//! library, fills a [`RunReport`], and picks the exit code.

use clap::ArgMatches;

use scm_core::{
    apply_shift_scale, certify_linear, check_composition_bound, compose, counterfactual_aap,
    counterfactual_map_linear, counterfactual_sample, empirical_tail_check, intervene_twin,
    kappa_after_intervention, linear_moments, picard_solve, sample_observational,
    verify_noise_lipschitz_linear, ContractionCertificate, Error, Intervention,
    LipschitzFunctional, NormIndex, ScmModel, TailBoundSpec,
};

use crate::report::{
    ComposedTarget, CompositionPayload, CounterfactualPayload, InterventionPayload, MomentsPayload,
    RunReport, SamplesPayload, SolvePayload, TailCheckPayload,
};
use crate::{Cli, Command};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_CERTIFICATION: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_ABDUCTION: i32 = 4;
pub const EXIT_TAILCHECK: i32 = 5;

pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> CliError {
        CliError {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn certification(message: impl Into<String>) -> CliError {
        CliError {
            code: EXIT_CERTIFICATION,
            message: message.into(),
        }
    }
}

fn classify(err: &Error) -> i32 {
    match err {
        Error::Io(_)
        | Error::Parse { .. }
        | Error::Schema(_)
        | Error::ExprSyntax { .. }
        | Error::UnknownIdentifier { .. }
        | Error::UnknownFunction { .. }
        | Error::InvalidModel(_)
        | Error::InvalidIntervention(_)
        | Error::InvalidSpec(_)
        | Error::DimensionMismatch { .. }
        | Error::NonLinearModel => EXIT_INPUT,
        Error::Uncertifiable(_) | Error::KappaNotContractive { .. } => EXIT_CERTIFICATION,
        Error::Diverged { .. }
        | Error::MaxIterExceeded { .. }
        | Error::SingularSystem { .. }
        | Error::NumericalFailure(_) => EXIT_SOLVER,
        Error::DegenerateNoise { .. } => EXIT_ABDUCTION,
        Error::Row { source, .. } => classify(source),
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> CliError {
        CliError {
            code: classify(&err),
            message: err.to_string(),
        }
    }
}

fn load(path: &str) -> Result<ScmModel, CliError> {
    scm_core::load_model(path).map_err(|err| CliError {
        code: classify(&err),
        message: format!("{path}: {err}"),
    })
}

fn digest(path: &str) -> Option<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).ok()?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Some(format!("{:x}", hasher.finalize()))
}

fn parse_norm(text: &str) -> Result<NormIndex, CliError> {
    NormIndex::parse(text)
        .ok_or_else(|| CliError::input(format!("invalid norm index `{text}` (use 1, 2, or inf)")))
}

fn parse_csv_numbers(text: &str, what: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::input(format!("invalid {what} entry `{s}`")))
        })
        .collect()
}

/// Certified constant when the model admits one; errors are deferred to the
/// caller as `None` so commands can decide how strict to be.
fn try_certify(model: &ScmModel, p: NormIndex) -> Option<ContractionCertificate> {
    scm_core::certify(model, p).ok()
}

fn kappa_hint(model: &ScmModel, p: NormIndex) -> Option<f64> {
    try_certify(model, p)
        .filter(ContractionCertificate::claims_simple)
        .map(|c| c.kappa)
}

// ── Intervention flags ──

/// Reconstructs the interventions in command-line order across the
/// interleaved `--ss` and `--do` occurrences.
fn ordered_interventions(
    sub: &ArgMatches,
    model: &ScmModel,
) -> Result<Vec<Intervention>, CliError> {
    let mut staged: Vec<(usize, Intervention)> = Vec::new();
    if let Some(values) = sub.get_many::<String>("ss") {
        let indices = sub.indices_of("ss").expect("indices follow values");
        for (index, value) in indices.zip(values) {
            staged.push((index, parse_ss(value, model)?));
        }
    }
    if let Some(values) = sub.get_many::<String>("do") {
        let indices = sub.indices_of("do").expect("indices follow values");
        for (index, value) in indices.zip(values) {
            staged.push((index, parse_do(value, model)?));
        }
    }
    staged.sort_by_key(|(index, _)| *index);
    Ok(staged.into_iter().map(|(_, iv)| iv).collect())
}

fn resolve_variable(model: &ScmModel, name: &str) -> Result<usize, CliError> {
    model
        .index_of(name)
        .ok_or_else(|| CliError::input(format!("unknown variable name `{name}`")))
}

fn parse_ss(value: &str, model: &ScmModel) -> Result<Intervention, CliError> {
    let parts: Vec<&str> = value.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::input(format!(
            "invalid --ss `{value}` (expected NAME:scale:shift)"
        )));
    }
    let index = resolve_variable(model, parts[0])?;
    let scale = parts[1]
        .parse::<f64>()
        .map_err(|_| CliError::input(format!("invalid scale in --ss `{value}`")))?;
    let shift = parts[2]
        .parse::<f64>()
        .map_err(|_| CliError::input(format!("invalid shift in --ss `{value}`")))?;
    Ok(Intervention::shift_scale(index, scale, shift))
}

fn parse_do(value: &str, model: &ScmModel) -> Result<Intervention, CliError> {
    let parts: Vec<&str> = value.split(':').collect();
    if parts.len() != 2 {
        return Err(CliError::input(format!(
            "invalid --do `{value}` (expected NAME:value)"
        )));
    }
    let index = resolve_variable(model, parts[0])?;
    let fixed = parts[1]
        .parse::<f64>()
        .map_err(|_| CliError::input(format!("invalid value in --do `{value}`")))?;
    Ok(Intervention::do_value(index, fixed))
}

fn composed_targets(model: &ScmModel, intervention: &Intervention) -> Vec<ComposedTarget> {
    intervention
        .targets()
        .iter()
        .map(|t| ComposedTarget {
            variable: model.variables()[t.index].clone(),
            scale: t.scale,
            shift: t.shift,
        })
        .collect()
}

// ── Handlers ──

pub fn run(cli: &Cli, matches: &ArgMatches) -> Result<RunReport, CliError> {
    let started = std::time::Instant::now();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (_, sub) = matches.subcommand().expect("subcommand required by clap");
    let mut report = match &cli.command {
        Command::Certify(cmd) => certify_cmd(cli, cmd, args)?,
        Command::Solve(cmd) => solve_cmd(cli, cmd, args)?,
        Command::Sample(cmd) => sample_cmd(cli, cmd, args)?,
        Command::Intervene(cmd) => intervene_cmd(cli, cmd, sub, args)?,
        Command::Counterfactual(cmd) => counterfactual_cmd(cli, cmd, sub, args)?,
        Command::Tailcheck(cmd) => tailcheck_cmd(cli, cmd, sub, args)?,
        Command::Compose(cmd) => compose_cmd(cli, cmd, sub, args)?,
    };
    report.elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}

fn certify_cmd(
    cli: &Cli,
    cmd: &crate::CertifyArgs,
    args: Vec<String>,
) -> Result<RunReport, CliError> {
    let model = load(&cmd.model)?;
    let p = parse_norm(&cmd.p)?;
    let mut report = RunReport::new("certify", args, cli.seed);
    report.model_digest = digest(&cmd.model);

    let direct = if model.is_linear() {
        certify_linear(&model, p).map_err(CliError::from).map(Some)
    } else {
        match scm_core::bound_expr_lipschitz(&model, p) {
            Ok(cert) => Ok(Some(cert)),
            Err(Error::Uncertifiable(reason)) => {
                report.hint = Some(format!(
                    "{reason}; rerun with --samples N for a sampled (non-certified) estimate"
                ));
                Ok(None)
            }
            Err(other) => Err(other.into()),
        }
    }?;

    let certificate = match (direct, cmd.samples) {
        (Some(cert), _) => Some(cert),
        (None, Some(n_pairs)) => {
            report.hint = None;
            Some(scm_core::estimate_kappa_sampled(
                &model, p, n_pairs, cli.seed,
            )?)
        }
        (None, None) => None,
    };

    let verdict = match &certificate {
        Some(cert) if cert.claims_simple() => "yes",
        Some(cert) if cert.is_certified => "no",
        // a sampled ratio at or above one witnesses expansion
        Some(cert) if !cert.is_certified && cert.kappa >= 1.0 => "no",
        _ => "unknown",
    };
    report.exit_code = if verdict == "yes" {
        EXIT_OK
    } else {
        EXIT_CERTIFICATION
    };
    report.simple = Some(verdict.to_string());
    report.certificate = certificate;
    Ok(report)
}

fn solve_cmd(cli: &Cli, cmd: &crate::SolveArgs, args: Vec<String>) -> Result<RunReport, CliError> {
    let model = load(&cmd.model)?;
    let p = parse_norm(&cmd.p)?;
    let noise = match (&cmd.noise, cmd.zero_noise) {
        (Some(text), false) => parse_csv_numbers(text, "noise")?,
        (None, true) => vec![0.0; model.n()],
        _ => {
            return Err(CliError::input(
                "exactly one of --noise or --zero-noise is required",
            ))
        }
    };
    if noise.len() != model.n() {
        return Err(CliError::input(format!(
            "noise vector has {} entries but the model has {} variables",
            noise.len(),
            model.n()
        )));
    }
    let mut report = RunReport::new("solve", args, cli.seed);
    report.model_digest = digest(&cmd.model);
    let solved = picard_solve(
        &model,
        &noise,
        &vec![0.0; model.n()],
        p,
        cli.tol,
        cli.max_iter,
        kappa_hint(&model, p),
    )?;
    report.solve = Some(SolvePayload {
        variables: model.variables().to_vec(),
        report: solved,
    });
    Ok(report)
}

fn sample_cmd(
    cli: &Cli,
    cmd: &crate::SampleArgs,
    args: Vec<String>,
) -> Result<RunReport, CliError> {
    let model = load(&cmd.model)?;
    let samples = sample_observational(&model, cmd.n, cli.seed)?;
    std::fs::write(&cmd.out, samples.to_csv())
        .map_err(|err| CliError::input(format!("{}: {err}", cmd.out)))?;
    let mut report = RunReport::new("sample", args, cli.seed);
    report.model_digest = digest(&cmd.model);
    report.samples = Some(SamplesPayload {
        n: samples.n_rows(),
        columns: samples.columns.clone(),
        mean: samples.mean(),
        covariance: samples.covariance(),
        out_path: Some(cmd.out.clone()),
    });
    // linear models also get the analytic law for comparison
    if model.is_linear() {
        report.moments = Some(MomentsPayload::from_moments(
            model.variables().to_vec(),
            &linear_moments(&model)?,
        ));
    }
    Ok(report)
}

fn intervene_cmd(
    cli: &Cli,
    cmd: &crate::InterveneArgs,
    sub: &ArgMatches,
    args: Vec<String>,
) -> Result<RunReport, CliError> {
    let model = load(&cmd.model)?;
    let p = parse_norm(&cmd.p)?;
    let stages = ordered_interventions(sub, &model)?;
    if stages.is_empty() {
        return Err(CliError::input(
            "at least one --ss or --do flag is required",
        ));
    }
    let composed = compose(&stages)?;
    let intervened = apply_shift_scale(&model, &composed)?;
    scm_core::save_model(&intervened, &cmd.out)
        .map_err(|err| CliError::input(format!("{}: {err}", cmd.out)))?;

    let mut report = RunReport::new("intervene", args, cli.seed);
    report.model_digest = digest(&cmd.model);
    let contraction = try_certify(&model, p).map(|cert| kappa_after_intervention(&cert, &composed));
    report.intervention = Some(InterventionPayload {
        composed: composed_targets(&model, &composed),
        a_max: composed.a_max(),
        contraction,
        out_path: Some(cmd.out.clone()),
    });
    Ok(report)
}

fn counterfactual_cmd(
    cli: &Cli,
    cmd: &crate::CounterfactualArgs,
    sub: &ArgMatches,
    args: Vec<String>,
) -> Result<RunReport, CliError> {
    let model = load(&cmd.model)?;
    let stages = ordered_interventions(sub, &model)?;
    let intervention = if stages.is_empty() {
        Intervention::identity()
    } else {
        compose(&stages)?
    };
    let mut report = RunReport::new("counterfactual", args, cli.seed);
    report.model_digest = digest(&cmd.model);
    let mut payload = CounterfactualPayload {
        variables: model.variables().to_vec(),
        observation: None,
        abducted_noise: None,
        point: None,
        map_matrix: None,
        map_offset: None,
        joint: None,
    };

    if let Some(n) = cmd.samples {
        let twin = intervene_twin(
            &scm_core::build_twin(&model),
            &Intervention::identity(),
            &intervention,
        )?;
        let joint = counterfactual_sample(&twin, n, cli.seed)?;
        if let Some(path) = &cmd.out {
            std::fs::write(path, joint.to_csv())
                .map_err(|err| CliError::input(format!("{path}: {err}")))?;
        }
        payload.joint = Some(SamplesPayload {
            n: joint.n_rows(),
            columns: joint.columns.clone(),
            mean: joint.mean(),
            covariance: joint.covariance(),
            out_path: cmd.out.clone(),
        });
    }

    if let Some(obs_text) = &cmd.obs {
        let observation = parse_csv_numbers(obs_text, "observation")?;
        if observation.len() != model.n() {
            return Err(CliError::input(format!(
                "observation has {} entries but the model has {} variables",
                observation.len(),
                model.n()
            )));
        }
        if !model.is_linear() {
            return Err(CliError {
                code: EXIT_ABDUCTION,
                message: "exact counterfactuals need a purely linear model; use --samples for the Monte Carlo route".to_string(),
            });
        }
        let noise = scm_core::abduct_noise_linear(&model, &observation)?;
        let point = counterfactual_aap(&model, &intervention, &observation, cli.tol)?;
        let map = counterfactual_map_linear(&model, &intervention)?;
        payload.observation = Some(observation);
        payload.abducted_noise = Some(noise);
        payload.point = Some(point);
        payload.map_matrix = Some(map.matrix);
        payload.map_offset = Some(map.offset);
    } else if cmd.samples.is_none() {
        return Err(CliError::input(
            "provide --obs for the exact route or --samples N for the Monte Carlo route",
        ));
    }

    report.counterfactual = Some(payload);
    Ok(report)
}

fn parse_functional(
    text: &str,
    model: &ScmModel,
) -> Result<(LipschitzFunctional, String), CliError> {
    if text == "mean" {
        return Ok((LipschitzFunctional::ScaledMean, "mean".to_string()));
    }
    if let Some(name) = text.strip_prefix("proj:") {
        let stacked: Vec<String> = model
            .variables()
            .iter()
            .cloned()
            .chain(model.variables().iter().map(|v| format!("{v}'")))
            .collect();
        let coordinate = stacked
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| CliError::input(format!("unknown projection coordinate `{name}`")))?;
        return Ok((
            LipschitzFunctional::Projection { coordinate },
            text.to_string(),
        ));
    }
    if let Some(name) = text.strip_prefix("diff:") {
        let coordinate = model.index_of(name).ok_or_else(|| {
            CliError::input(format!("unknown variable `{name}` in diff functional"))
        })?;
        return Ok((
            LipschitzFunctional::ScaledDifference { coordinate },
            text.to_string(),
        ));
    }
    Err(CliError::input(format!(
        "invalid functional `{text}` (use proj:NAME, diff:NAME, or mean)"
    )))
}

fn tailcheck_cmd(
    cli: &Cli,
    cmd: &crate::TailcheckArgs,
    sub: &ArgMatches,
    args: Vec<String>,
) -> Result<RunReport, CliError> {
    let model = load(&cmd.model)?;
    let p = parse_norm(&cmd.p)?;
    let t_grid = parse_csv_numbers(&cmd.t_grid, "t-grid")?;
    if t_grid.is_empty() || t_grid.iter().any(|t| !(*t > 0.0)) {
        return Err(CliError::input("every t-grid value must be positive"));
    }

    let stages = ordered_interventions(sub, &model)?;
    let intervention = if stages.is_empty() {
        Intervention::identity()
    } else {
        compose(&stages)?
    };

    // certified constant, or the caller's asserted one
    let certificate = match cmd.assert_kappa {
        Some(kappa) => ContractionCertificate::user_asserted(p, kappa),
        None => match try_certify(&model, p) {
            Some(cert) if cert.claims_simple() => cert,
            Some(cert) => {
                return Err(CliError::certification(format!(
                "model is not certified contractive (kappa = {}); pass --assert-kappa to override",
                cert.kappa
            )))
            }
            None => {
                return Err(CliError::certification(
                    "no contraction certificate available; pass --assert-kappa to override",
                ))
            }
        },
    };

    let a_max = intervention.a_max();
    let kappa_eff = if a_max > 1.0 {
        if !cmd.allow_kappa_max {
            return Err(CliError::certification(format!(
                "intervention scales reach {a_max} > 1; pass --allow-kappa-max to use the inflated constant"
            )));
        }
        a_max * certificate.kappa
    } else {
        certificate.kappa
    };
    if kappa_eff >= 1.0 {
        return Err(CliError::certification(format!(
            "effective contraction constant {kappa_eff} is not below one"
        )));
    }

    // unit noise gain: automatic for linear models, asserted otherwise
    if model.is_linear() {
        let noise_check = verify_noise_lipschitz_linear(&model)?;
        if !noise_check.passed {
            return Err(CliError::certification(format!(
                "noise gain {} at coordinate {} exceeds one, the tail bound's noise condition fails",
                noise_check.max_gain,
                noise_check.offending_coordinate.unwrap()
            )));
        }
    }

    let twin = intervene_twin(
        &scm_core::build_twin(&model),
        &Intervention::identity(),
        &intervention,
    )?;
    let (functional, functional_label) = parse_functional(&cmd.functional, &model)?;
    let spec = TailBoundSpec {
        kappa: kappa_eff,
        sigma2: scm_core::effective_sigma2_twin(&twin),
        p,
        d: model.n(),
    };
    let outcome = empirical_tail_check(
        &twin,
        &functional,
        &spec,
        &t_grid,
        cmd.n,
        cli.seed,
        cmd.two_sided,
    )?;

    let mut report = RunReport::new("tailcheck", args, cli.seed);
    report.model_digest = digest(&cmd.model);
    report.exit_code = if outcome.passed {
        EXIT_OK
    } else {
        EXIT_TAILCHECK
    };
    if cmd.assert_kappa.is_some() {
        report.hint = Some("contraction constant is user-asserted, not certified".to_string());
    }
    if let Some(path) = &cmd.out {
        std::fs::write(path, outcome.to_csv())
            .map_err(|err| CliError::input(format!("{path}: {err}")))?;
    }
    report.certificate = Some(certificate);
    report.tailcheck = Some(TailCheckPayload {
        functional: functional_label,
        spec_kappa: spec.kappa,
        spec_sigma2: spec.sigma2,
        proxy: spec.proxy(),
        report: outcome,
        out_path: cmd.out.clone(),
    });
    Ok(report)
}

fn compose_cmd(
    cli: &Cli,
    cmd: &crate::ComposeArgs,
    sub: &ArgMatches,
    args: Vec<String>,
) -> Result<RunReport, CliError> {
    let model = load(&cmd.model)?;
    let stages = ordered_interventions(sub, &model)?;
    if stages.is_empty() {
        return Err(CliError::input(
            "at least one --ss or --do flag is required",
        ));
    }
    let composed = compose(&stages)?;
    let bound = check_composition_bound(&stages)?;
    let mut report = RunReport::new("compose", args, cli.seed);
    report.model_digest = digest(&cmd.model);
    report.composition = Some(CompositionPayload {
        composed: composed_targets(&model, &composed),
        bound,
    });
    Ok(report)
}
