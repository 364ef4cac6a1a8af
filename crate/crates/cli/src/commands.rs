//! The six subcommands. Each is a pure function of (config, seed, inputs):
//! rerunning with the same arguments rewrites byte-identical artifacts.

use crate::config::RunConfig;
use crate::error::{user, CliError};
use crate::fanout::{fan_out, thread_budget};
use tsviz_core::checkpoint;
use tsviz_core::data::{self, DatasetSplit, GenSpec};
use tsviz_core::gradcheck::{self, GradCheckConfig};
use tsviz_core::model::{BatchLoss, TeacherStudentModel};
use tsviz_core::perturb::{self, ScoreClass, TeacherScorer};
use tsviz_core::tensor::Tensor;
use tsviz_core::trainer;
use tsviz_core::viz::{self, Method};

pub fn generate(cfg: &RunConfig) -> Result<(), CliError> {
    let seed = cfg.require_seed()?;
    let spec = GenSpec {
        num_classes: cfg.num_classes,
        per_class: cfg.per_class,
        image_size: cfg.image_size,
        seed,
    };
    let split = data::generate(&spec)?;
    let dir = cfg.dataset_dir();
    data::write_dataset(&split, &dir)?;
    println!(
        "wrote {} train + {} validation images ({} classes, {}px, seed {seed}) to {}",
        split.train.len(),
        split.validation.len(),
        split.num_classes,
        cfg.image_size,
        dir.display()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let seed = cfg.require_seed()?;
    let split = load_dataset(cfg)?;
    if split.num_classes != cfg.num_classes {
        return Err(user(format!(
            "dataset has {} classes but the config says {}",
            split.num_classes, cfg.num_classes
        )));
    }
    let mut model = TeacherStudentModel::new(cfg.network(), seed)?;
    let report = trainer::train(
        &mut model,
        &split.train_pairs(),
        &split.validation_pairs(),
        &cfg.training(seed),
    )?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let ckpt = cfg.checkpoint_path();
    checkpoint::save_checkpoint(&model, &ckpt)?;
    let csv = cfg.out_dir.join("training.csv");
    report.write_csv(&csv)?;
    let last = report
        .epochs
        .last()
        .ok_or_else(|| user("training produced no epochs"))?;
    println!(
        "trained {} epochs in {:.0?}: teacher val acc {:.3}, student val acc {:.3}",
        report.epochs.len(),
        report.wall_time,
        last.val_acc_teacher,
        last.val_acc_student
    );
    println!("checkpoint: {}", ckpt.display());
    println!("metrics:    {}", csv.display());
    Ok(())
}

pub fn visualize(cfg: &RunConfig) -> Result<(), CliError> {
    let (model, split) = load_model_and_dataset(cfg)?;
    let samples: Vec<_> = split.validation.iter().take(cfg.viz_images).collect();
    if samples.is_empty() {
        return Err(user("dataset has no validation images"));
    }
    let methods = cfg.method.methods();
    let dir = cfg.out_dir.join("viz");
    std::fs::create_dir_all(&dir)?;

    let jobs = fan_out(samples.len(), thread_budget(), |idx| {
        per_image_maps(&model, &samples[idx].image, samples[idx].label, &methods, cfg)
    });
    for (idx, job) in jobs.into_iter().enumerate() {
        let (v, maps) = job?;
        let sample = samples[idx];
        tsviz_core::pnm::write_ppm(&sample.image, &dir.join(format!("img{idx:03}.ppm")))
            .map_err(viz::VizError::from)?;
        tsviz_core::pnm::write_ppm(&v, &dir.join(format!("img{idx:03}.reconstruction.ppm")))
            .map_err(viz::VizError::from)?;
        for (method, heat, mask) in maps {
            let name = method.name();
            viz::write_heatmap_pgm(&heat, &dir.join(format!("img{idx:03}.{name}.pgm")))?;
            viz::write_heatmap_pgm(
                &mask.to_tensor(),
                &dir.join(format!("img{idx:03}.{name}.mask.pgm")),
            )?;
        }
    }
    println!(
        "wrote heatmaps and threshold masks (t = {}) for {} images to {}",
        cfg.threshold,
        samples.len(),
        dir.display()
    );
    Ok(())
}

type ImageMaps = (Tensor, Vec<(Method, Tensor, tsviz_core::mask::Mask)>);

fn per_image_maps(
    model: &TeacherStudentModel,
    image: &Tensor,
    label: usize,
    methods: &[Method],
    cfg: &RunConfig,
) -> Result<ImageMaps, CliError> {
    let v = model.forward(image)?.v;
    let class = explained_class(model, image, label, cfg.f_class)?;
    let mut maps = Vec::with_capacity(methods.len());
    for &method in methods {
        let heat = viz::explain(model, image, method, Some(class))?;
        let mask = viz::threshold_mask(&heat, cfg.threshold)?;
        maps.push((method, heat, mask));
    }
    Ok((v, maps))
}

fn explained_class(
    model: &TeacherStudentModel,
    image: &Tensor,
    label: usize,
    mode: ScoreClass,
) -> Result<usize, CliError> {
    Ok(match mode {
        ScoreClass::Predicted => model.forward(image)?.yt.argmax(),
        ScoreClass::Label => label,
    })
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let (model, split) = load_model_and_dataset(cfg)?;
    let samples = eval_samples(&split, cfg.eval_images);
    let methods = cfg.method.methods();
    let dir = cfg.out_dir.join("eval");
    std::fs::create_dir_all(&dir)?;

    let comparison = run_comparison(&model, &samples, &methods, cfg.f_class)?;
    let heatmaps = method_heatmaps(&model, &samples, &methods, cfg.f_class)?;

    for result in &comparison.results {
        let name = result.method.name();
        std::fs::write(dir.join(format!("{name}.curve.csv")), mean_curve_csv(result))?;
        std::fs::write(
            dir.join(format!("{name}.images.csv")),
            perturb::curves_csv(result),
        )?;
    }
    std::fs::write(dir.join("aopc.csv"), aopc_table_csv(&comparison))?;
    std::fs::write(dir.join("clusters.csv"), clusters_csv(&methods, &heatmaps)?)?;
    std::fs::write(dir.join("histogram.csv"), histogram_csv(&methods, &heatmaps)?)?;

    for result in &comparison.results {
        println!(
            "mean AOPC {:<9} = {:.4}  ({} images)",
            result.method.name(),
            result.mean_aopc,
            result.curves.len()
        );
    }
    println!("tables: {}", dir.display());
    Ok(())
}

pub fn compare(cfg: &RunConfig) -> Result<(), CliError> {
    let (model, split) = load_model_and_dataset(cfg)?;
    let samples = eval_samples(&split, cfg.eval_images);
    let methods = cfg.method.methods();
    let comparison = run_comparison(&model, &samples, &methods, cfg.f_class)?;
    let heatmaps = method_heatmaps(&model, &samples, &methods, cfg.f_class)?;

    let diseased: Vec<_> = split
        .validation
        .iter()
        .take(cfg.eval_images)
        .filter(|s| s.label > 0)
        .collect();

    let mut rows = Vec::new();
    for (m, maps) in methods.iter().zip(heatmaps.iter()) {
        let aopc = comparison
            .result(*m)
            .map(|r| r.mean_aopc)
            .ok_or_else(|| user("missing method result"))?;
        let stats = perturb::cluster_stats(maps)?;
        let iou = mean_lesion_iou(&model, &diseased, *m, cfg)?;
        rows.push((m.name(), aopc, iou, stats));
    }

    println!("method     mean_aopc  mean_iou  zero_share  mid_share  high_share");
    for (name, aopc, iou, stats) in &rows {
        println!(
            "{name:<9}  {aopc:>9.4}  {:>8}  {:>10.4}  {:>9.4}  {:>10.4}",
            iou.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            stats.zero_share,
            stats.mid_share,
            stats.high_share
        );
    }
    println!(
        "large-scale reference: aopc proposed {} / gradcam {} / gradient {}; shares {}/{}/{}",
        perturb::reference::AOPC_PROPOSED,
        perturb::reference::AOPC_GRADCAM,
        perturb::reference::AOPC_GRADIENT,
        perturb::reference::ZERO_SHARE,
        perturb::reference::MID_SHARE,
        perturb::reference::HIGH_SHARE,
    );

    let mut csv = String::from("method,mean_aopc,mean_iou,zero_share,mid_share,high_share\n");
    for (name, aopc, iou, stats) in &rows {
        csv.push_str(&format!(
            "{name},{aopc},{},{},{},{}\n",
            iou.map(|v| v.to_string()).unwrap_or_default(),
            stats.zero_share,
            stats.mid_share,
            stats.high_share
        ));
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("compare.csv");
    std::fs::write(&path, csv)?;
    println!("table: {}", path.display());
    Ok(())
}

pub fn gradcheck_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let seed = cfg.seed.unwrap_or(0);
    let batch = gradcheck::general_position_batch(
        cfg.gradcheck_batch,
        cfg.num_classes,
        cfg.image_size,
        seed,
    );
    let mut model = TeacherStudentModel::new(cfg.network(), seed)?;
    let mut loss = BatchLoss::new(&mut model, &batch)?;
    gradcheck::nudge_to_general_position(&mut loss, seed ^ 0xd17e);
    let check_cfg = GradCheckConfig {
        samples_per_param: cfg.gradcheck_samples,
        ..GradCheckConfig::default()
    };
    let report = gradcheck::check(&mut loss, &check_cfg);
    println!("{report}");
    if report.all_pass() {
        println!(
            "gradient check passed: {} parameters, max relative error {:.3e}",
            report.params.len(),
            report.max_rel_err()
        );
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "gradient check failed on {} of {} parameters (worst relative error {:.3e})",
            report.failures().len(),
            report.params.len(),
            report.max_rel_err()
        )))
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<DatasetSplit, CliError> {
    let dir = cfg.dataset_dir();
    if !dir.join("manifest.csv").exists() {
        return Err(user(format!(
            "no dataset at {} (run `tsviz generate` first or set dataset_dir)",
            dir.display()
        )));
    }
    Ok(data::load_dataset(&dir)?)
}

fn load_model_and_dataset(cfg: &RunConfig) -> Result<(TeacherStudentModel, DatasetSplit), CliError> {
    let ckpt = cfg.checkpoint_path();
    if !ckpt.exists() {
        return Err(user(format!(
            "no checkpoint at {} (run `tsviz train` first or set checkpoint)",
            ckpt.display()
        )));
    }
    let model = checkpoint::load_checkpoint(&ckpt)?;
    let split = load_dataset(cfg)?;
    let sample = split
        .train
        .first()
        .or(split.validation.first())
        .ok_or_else(|| user("dataset is empty"))?;
    if sample.image.shape()[0] != model.config.image_size {
        return Err(user(format!(
            "checkpoint expects {}px images but the dataset is {}px",
            model.config.image_size,
            sample.image.shape()[0]
        )));
    }
    if split.num_classes != model.config.num_classes {
        return Err(user(format!(
            "checkpoint has {} classes but the dataset has {}",
            model.config.num_classes, split.num_classes
        )));
    }
    Ok((model, split))
}

fn eval_samples(split: &DatasetSplit, limit: usize) -> Vec<(Tensor, usize)> {
    split
        .validation
        .iter()
        .take(limit)
        .map(|s| (s.image.clone(), s.label))
        .collect()
}

/// compare_methods with the per-image work fanned out.
fn run_comparison(
    model: &TeacherStudentModel,
    samples: &[(Tensor, usize)],
    methods: &[Method],
    f_class: ScoreClass,
) -> Result<perturb::MethodComparison, CliError> {
    if samples.is_empty() {
        return Err(user("dataset has no validation images"));
    }
    let mut results = Vec::with_capacity(methods.len());
    for &method in methods {
        let curves = fan_out(samples.len(), thread_budget(), |idx| {
            let (image, label) = &samples[idx];
            let class = explained_class(model, image, *label, f_class)?;
            let heat = viz::explain(model, image, method, Some(class))?;
            let scorer = TeacherScorer::new(model, class);
            Ok::<_, CliError>(perturb::perturbation_curve(&scorer, image, &heat)?)
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
        let mean_aopc = perturb::mean_aopc(&curves)?;
        results.push(perturb::MethodResult {
            method,
            mean_aopc,
            curves,
        });
    }
    Ok(perturb::MethodComparison { results })
}

fn method_heatmaps(
    model: &TeacherStudentModel,
    samples: &[(Tensor, usize)],
    methods: &[Method],
    f_class: ScoreClass,
) -> Result<Vec<Vec<Tensor>>, CliError> {
    let mut all = Vec::with_capacity(methods.len());
    for &method in methods {
        let maps = fan_out(samples.len(), thread_budget(), |idx| {
            let (image, label) = &samples[idx];
            let class = explained_class(model, image, *label, f_class)?;
            Ok::<_, CliError>(viz::explain(model, image, method, Some(class))?)
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
        all.push(maps);
    }
    Ok(all)
}

fn mean_lesion_iou(
    model: &TeacherStudentModel,
    diseased: &[&tsviz_core::data::SyntheticSample],
    method: Method,
    cfg: &RunConfig,
) -> Result<Option<f64>, CliError> {
    if diseased.is_empty() {
        return Ok(None);
    }
    let ious = fan_out(diseased.len(), thread_budget(), |idx| {
        let s = diseased[idx];
        let class = explained_class(model, &s.image, s.label, cfg.f_class)?;
        let heat = viz::explain(model, &s.image, method, Some(class))?;
        let mask = viz::threshold_mask(&heat, cfg.threshold)?;
        Ok::<_, CliError>(perturb::localization_iou(&mask, &s.lesion_mask)?)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok(Some(ious.iter().sum::<f64>() / ious.len() as f64))
}

/// j, mean_f rows: the per-round score averaged over images.
fn mean_curve_csv(result: &perturb::MethodResult) -> String {
    let mut out = String::from("j,mean_f\n");
    let n = result.curves.len() as f64;
    for j in 0..perturb::CURVE_POINTS {
        let mean: f64 = result.curves.iter().map(|c| c.scores[j]).sum::<f64>() / n;
        out.push_str(&format!("{j},{mean}\n"));
    }
    out
}

fn aopc_table_csv(comparison: &perturb::MethodComparison) -> String {
    let mut out = String::from("image");
    for r in &comparison.results {
        out.push(',');
        out.push_str(r.method.name());
    }
    out.push('\n');
    let n = comparison
        .results
        .first()
        .map(|r| r.curves.len())
        .unwrap_or(0);
    for idx in 0..n {
        out.push_str(&idx.to_string());
        for r in &comparison.results {
            out.push_str(&format!(",{}", r.curves[idx].aopc()));
        }
        out.push('\n');
    }
    out
}

fn clusters_csv(methods: &[Method], heatmaps: &[Vec<Tensor>]) -> Result<String, CliError> {
    let mut out = String::from("method,zero_share,mid_share,high_share\n");
    for (m, maps) in methods.iter().zip(heatmaps.iter()) {
        let stats = perturb::cluster_stats(maps)?;
        out.push_str(&format!(
            "{},{},{},{}\n",
            m.name(),
            stats.zero_share,
            stats.mid_share,
            stats.high_share
        ));
    }
    Ok(out)
}

fn histogram_csv(methods: &[Method], heatmaps: &[Vec<Tensor>]) -> Result<String, CliError> {
    let mut out = String::from("bin_low");
    for m in methods {
        out.push(',');
        out.push_str(m.name());
    }
    out.push('\n');
    let stats: Vec<_> = heatmaps
        .iter()
        .map(|maps| perturb::cluster_stats(maps))
        .collect::<Result<_, _>>()?;
    for bin in 0..100 {
        out.push_str(&format!("{}", bin as f64 / 100.0));
        for s in &stats {
            out.push_str(&format!(",{}", s.histogram[bin]));
        }
        out.push('\n');
    }
    Ok(out)
}
