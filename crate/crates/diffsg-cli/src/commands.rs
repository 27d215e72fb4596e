//! Subcommand implementations.

use std::io::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context};

use diffsg_core::baselines::{mtfnn_train, MtfnnConfig, MtfnnParams};
use diffsg_core::checkpoint;
use diffsg_core::data::{fit_norm, generate_dataset, Dataset, NormStats};
use diffsg_core::denoiser::DenoiserParams;
use diffsg_core::diffusion::{fit_denoiser, NoiseSchedule};
use diffsg_core::eval::{evaluate, export_trace, write_reports, EvalReport, GridSpec, Method};
use diffsg_core::problems::Domain;
use diffsg_core::Rng;

use crate::config::RunConfig;

pub fn gen_data(config: &RunConfig) -> anyhow::Result<()> {
    std::fs::create_dir_all(config.data_dir())?;
    let kind = config.problem;
    let train_size = config.train_size();
    let val_size = config.val_size();
    // One master seed; the three splits own disjoint sample-index windows.
    log::info!("generating {kind}: {train_size} train + 2x{val_size} validation pairs");
    let train = generate_dataset(kind, train_size, Domain::In, config.seed, 0, &config.ranges)?;
    let val_in = generate_dataset(
        kind,
        val_size,
        Domain::In,
        config.seed,
        train_size as u64,
        &config.ranges,
    )?;
    let val_ood = generate_dataset(
        kind,
        val_size,
        Domain::Ood,
        config.seed,
        (train_size + val_size) as u64,
        &config.ranges,
    )?;
    let stats = fit_norm(&train)?;
    train.save(&config.train_path())?;
    val_in.save(&config.val_path(Domain::In))?;
    val_ood.save(&config.val_path(Domain::Ood))?;
    stats.save(&config.stats_path())?;
    let manifest = config.write_manifest("gen-data")?;
    log::info!("datasets in {}, manifest {}", config.data_dir().display(), manifest.display());
    Ok(())
}

pub fn train(config: &RunConfig) -> anyhow::Result<()> {
    let dataset = Dataset::load(&config.train_path())
        .with_context(|| format!("training data missing at {}", config.train_path().display()))?;
    if dataset.kind != config.problem {
        bail!("dataset holds {} but config wants {}", dataset.kind, config.problem);
    }
    let stats = NormStats::load(&config.stats_path())?;
    let pairs = dataset.normalized_pairs(&stats);
    let denoiser_config = config.denoiser_config();
    let schedule = NoiseSchedule::cosine(denoiser_config.max_step)?;
    let train_config = config.train_config();
    log::info!(
        "training {} denoiser: {} pairs, {} epochs, batch {}",
        config.problem,
        pairs.len(),
        train_config.epochs,
        train_config.batch_size
    );
    let mut params = DenoiserParams::init(denoiser_config, &mut Rng::derive(config.seed, 0x696e_6974))?;
    let log_rows = fit_denoiser(&mut params, &pairs, &schedule, &train_config)?;

    std::fs::create_dir_all(&config.out_dir)?;
    checkpoint::save_denoiser(&params, &config.checkpoint_path())?;
    let mut loss_file = std::fs::File::create(config.loss_log_path())?;
    writeln!(loss_file, "epoch,loss")?;
    for row in &log_rows {
        writeln!(loss_file, "{},{}", row.epoch, row.loss)?;
    }
    let manifest = config.write_manifest("train")?;
    log::info!(
        "checkpoint {} (final loss {:.6}), manifest {}",
        config.checkpoint_path().display(),
        log_rows.last().map(|r| r.loss).unwrap_or(f64::NAN),
        manifest.display()
    );
    Ok(())
}

pub fn sample(config: &RunConfig, instances: &PathBuf, count: usize) -> anyhow::Result<()> {
    let params = checkpoint::load_denoiser(&config.checkpoint_path())?;
    let stats = NormStats::load(&config.stats_path())?;
    let dataset = Dataset::load(instances)
        .with_context(|| format!("instance file missing at {}", instances.display()))?;
    let schedule = NoiseSchedule::cosine(params.config().max_step)?;
    let sampler = config.sampler_config();
    let k = config.sampler.k;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (i, (x, _)) in dataset.pairs.iter().take(count).enumerate() {
        let cond = stats.normalize_condition(&x.condition());
        let mut rng = Rng::derive(config.seed, i as u64);
        let chains = diffsg_core::diffusion::sample(
            &params,
            &cond,
            &schedule,
            &config.guidance,
            &sampler,
            &mut rng,
            k,
            &mut |_, _, _| {},
        )?;
        for (chain_index, chain) in chains.iter().enumerate() {
            let native = stats.denormalize_solution(chain);
            let solution = diffsg_core::problems::project_feasible(x, &native);
            let objective = diffsg_core::problems::objective(x, &solution)?;
            let record = serde_json::json!({
                "instance_index": i,
                "sample_index": chain_index,
                "solution": solution,
                "objective": objective,
            });
            writeln!(out, "{record}")?;
        }
    }
    Ok(())
}

/// Which validation domains a command touches.
pub fn domains_from_flag(domain: Option<&str>) -> anyhow::Result<Vec<Domain>> {
    match domain {
        None => Ok(vec![Domain::In, Domain::Ood]),
        Some("in") => Ok(vec![Domain::In]),
        Some("ood") => Ok(vec![Domain::Ood]),
        Some(other) => bail!("unknown domain {other:?} (expected in|ood)"),
    }
}

pub fn eval(config: &RunConfig, domain: Option<&str>) -> anyhow::Result<()> {
    let params = checkpoint::load_denoiser(&config.checkpoint_path())?;
    let stats = NormStats::load(&config.stats_path())?;
    let schedule = NoiseSchedule::cosine(params.config().max_step)?;
    let sampler = config.sampler_config();
    let mut reports = Vec::new();
    for d in domains_from_flag(domain)? {
        let dataset = Dataset::load(&config.val_path(d))
            .with_context(|| format!("validation data missing at {}", config.val_path(d).display()))?;
        let method = Method::Diffsg {
            params: &params,
            schedule: &schedule,
            guidance: config.guidance,
            sampler: sampler.clone(),
        };
        let report = evaluate(&method, &dataset, &stats, config.sampler.k, config.seed)?;
        log::info!("{}", report.to_text().trim_end());
        reports.push(report);
    }
    write_report_files(config, "diffsg", &reports)?;
    config.write_manifest("eval")?;
    Ok(())
}

pub fn baseline(config: &RunConfig, method_name: &str, domain: Option<&str>) -> anyhow::Result<()> {
    let stats = NormStats::load(&config.stats_path())?;
    let mut reports = Vec::new();
    match method_name {
        "gd" => {
            for d in domains_from_flag(domain)? {
                let dataset = Dataset::load(&config.val_path(d))?;
                let report = evaluate(
                    &Method::Gd { config: config.gd },
                    &dataset,
                    &stats,
                    1,
                    config.seed,
                )?;
                log::info!("{}", report.to_text().trim_end());
                reports.push(report);
            }
        }
        "mtfnn" => {
            let train_set = Dataset::load(&config.train_path())?;
            let pairs = train_set.normalized_pairs(&stats);
            let mtfnn_config = MtfnnConfig::standard(
                config.problem.condition_dim(),
                config.problem.solution_dim(),
            );
            let mut params =
                MtfnnParams::init(mtfnn_config, &mut Rng::derive(config.seed, 0x6d74_666e))?;
            let train_config = config.train_config();
            log::info!(
                "training mtfnn baseline: {} pairs, {} epochs",
                pairs.len(),
                train_config.epochs
            );
            mtfnn_train(&mut params, &pairs, &train_config)?;
            checkpoint::save_mtfnn(&params, &config.mtfnn_checkpoint_path())?;
            for d in domains_from_flag(domain)? {
                let dataset = Dataset::load(&config.val_path(d))?;
                let report =
                    evaluate(&Method::Mtfnn { params: &params }, &dataset, &stats, 1, config.seed)?;
                log::info!("{}", report.to_text().trim_end());
                reports.push(report);
            }
        }
        other => bail!("unknown baseline {other:?} (expected gd|mtfnn)"),
    }
    write_report_files(config, method_name, &reports)?;
    config.write_manifest(&format!("baseline-{method_name}"))?;
    Ok(())
}

pub fn trace(config: &RunConfig, instance_index: usize, resolution: usize) -> anyhow::Result<()> {
    let params = checkpoint::load_denoiser(&config.checkpoint_path())?;
    let stats = NormStats::load(&config.stats_path())?;
    let dataset = Dataset::load(&config.val_path(Domain::In))?;
    let Some((x, _)) = dataset.pairs.get(instance_index) else {
        bail!("instance index {instance_index} out of range ({} pairs)", dataset.pairs.len());
    };
    let schedule = NoiseSchedule::cosine(params.config().max_step)?;
    let trace = export_trace(
        &params,
        &schedule,
        &config.guidance,
        &config.sampler_config(),
        x,
        &stats,
        GridSpec { resolution },
        config.seed,
    )?;
    std::fs::create_dir_all(&config.out_dir)?;
    let steps_path = config.out_dir.join("trace_steps.jsonl");
    let lattice_path = config.out_dir.join("trace_lattice.jsonl");
    trace.write(&steps_path, &lattice_path)?;
    config.write_manifest("trace")?;
    log::info!(
        "trace with {} steps -> {}, lattice {} points -> {}",
        trace.steps.len(),
        steps_path.display(),
        trace.lattice.len(),
        lattice_path.display()
    );
    Ok(())
}

fn write_report_files(config: &RunConfig, tag: &str, reports: &[EvalReport]) -> anyhow::Result<()> {
    std::fs::create_dir_all(&config.out_dir)?;
    let jsonl = config.out_dir.join(format!("report_{tag}.jsonl"));
    let text = config.out_dir.join(format!("report_{tag}.txt"));
    write_reports(reports, &jsonl, &text)?;
    log::info!("reports -> {} and {}", jsonl.display(), text.display());
    Ok(())
}
