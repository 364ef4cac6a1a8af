//! Rough training/evaluation probes for sizing test budgets. Not part of the
//! library. Usage: timing <train|probe> [lr] [epochs] [seed]

use std::io::Write;
use std::path::Path;
use std::time::Instant;
use tsviz_core::data::{generate, GenSpec};
use tsviz_core::model::{NetworkConfig, TeacherStudentModel};
use tsviz_core::perturb::{self, ScoreClass};
use tsviz_core::viz::Method;
use tsviz_core::trainer::{self, TrainConfig};
use tsviz_core::viz;

// Group gradient norms on one 8-image batch: shows which subsystems still learn.
fn print_liveness(model: &mut TeacherStudentModel, pairs: &[(tsviz_core::tensor::Tensor, usize)]) {
    use tsviz_core::gradcheck::DiffLoss;
    use tsviz_core::model::BatchLoss;
    let batch: Vec<_> = pairs.iter().take(8).cloned().collect();
    let bl = BatchLoss::new(model, &batch).unwrap();
    let (_, grads) = bl.loss_and_gradients();
    let mut dec = 0.0;
    let mut stu = 0.0;
    let mut head = 0.0;
    for i in 0..bl.n_params() {
        let g: f64 = grads
            .get(i)
            .map(|t| t.data().iter().map(|v| v * v).sum::<f64>())
            .unwrap_or(0.0);
        let name = bl.param_name(i);
        if name.starts_with("decoder/") {
            dec += g;
        } else if name == "student/head/w" || name == "student/head/b" {
            head += g;
        } else if name.starts_with("student/") {
            stu += g;
        }
    }
    println!(
        "  grads: dec {:.3e} stu {:.3e} head {:.3e}",
        dec.sqrt(),
        stu.sqrt(),
        head.sqrt()
    );
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(String::as_str).unwrap_or("train");
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(20);
    let seed: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1);

    let split = generate(&GenSpec::default()).unwrap();
    let train_pairs = split.train_pairs();
    let val_pairs = split.validation_pairs();
    let ckpt = Path::new("/tmp/probe.ckpt");

    // train/overfit: timing <mode> lr epochs seed [batch]
    // sched: timing sched seed batch lr1 e1 [lr2 e2 ...]
    if mode == "train" || mode == "overfit" {
        let batch: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(16);
        let (tp, vp) = if mode == "overfit" {
            let small = generate(&GenSpec {
                per_class: 16,
                ..GenSpec::default()
            })
            .unwrap();
            let mut all = small.train_pairs();
            all.extend(small.validation_pairs());
            (all.clone(), all)
        } else {
            (train_pairs.clone(), val_pairs.clone())
        };
        let mut model = TeacherStudentModel::new(NetworkConfig::default(), seed).unwrap();
        let t = Instant::now();
        for chunk in 0.. {
            let remaining = epochs - (chunk * 5).min(epochs);
            if remaining == 0 {
                break;
            }
            let cfg = TrainConfig {
                learning_rate: lr,
                epochs: remaining.min(5),
                batch_size: batch,
                seed: seed + chunk as u64,
                ..TrainConfig::default()
            };
            let report = trainer::train(&mut model, &tp, &vp, &cfg).unwrap();
            for e in &report.epochs {
                println!(
                    "epoch {:3}  lossT {:.4} lossS {:.4}  trainT {:.3} trainS {:.3}  valT {:.3} valS {:.3}",
                    chunk * 5 + e.epoch,
                    e.train_loss_teacher,
                    e.train_loss_student,
                    e.train_acc_teacher,
                    e.train_acc_student,
                    e.val_acc_teacher,
                    e.val_acc_student
                );
            }
            print_liveness(&mut model, &tp);
            std::io::stdout().flush().ok();
        }
        println!("wall: {:.0} s", t.elapsed().as_secs_f64());
        tsviz_core::checkpoint::save_checkpoint(&model, ckpt).unwrap();
        println!("saved {}", ckpt.display());
        return;
    }

    if mode == "sched" {
        let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
        let batch: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(8);
        let mut phases = Vec::new();
        let mut k = 4;
        while k + 1 < args.len() {
            phases.push((
                args[k].parse::<f64>().unwrap(),
                args[k + 1].parse::<usize>().unwrap(),
            ));
            k += 2;
        }
        let mut model = TeacherStudentModel::new(NetworkConfig::default(), seed).unwrap();
        let t = Instant::now();
        let mut done = 0;
        for (pi, &(plr, pe)) in phases.iter().enumerate() {
            let mut left = pe;
            while left > 0 {
                let cfg = TrainConfig {
                    learning_rate: plr,
                    epochs: left.min(5),
                    batch_size: batch,
                    seed: seed + done as u64,
                    ..TrainConfig::default()
                };
                let report = trainer::train(&mut model, &train_pairs, &val_pairs, &cfg).unwrap();
                for e in &report.epochs {
                    println!(
                        "p{pi} epoch {:3}  lossT {:.4} lossS {:.4}  trainT {:.3} trainS {:.3}  valT {:.3} valS {:.3}",
                        done + e.epoch,
                        e.train_loss_teacher,
                        e.train_loss_student,
                        e.train_acc_teacher,
                        e.train_acc_student,
                        e.val_acc_teacher,
                        e.val_acc_student
                    );
                }
                done += left.min(5);
                left -= left.min(5);
                std::io::stdout().flush().ok();
            }
        }
        println!("wall: {:.0} s", t.elapsed().as_secs_f64());
        tsviz_core::checkpoint::save_checkpoint(&model, ckpt).unwrap();
        println!("saved {}", ckpt.display());
        return;
    }

    // sched2: timing sched2 seed batch alpha1 lr1 e1 [alpha2 lr2 e2 ...]
    if mode == "sched2" {
        let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
        let batch: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(8);
        let mut phases = Vec::new();
        let mut k = 4;
        while k + 2 < args.len() {
            phases.push((
                args[k].parse::<f64>().unwrap(),
                args[k + 1].parse::<f64>().unwrap(),
                args[k + 2].parse::<usize>().unwrap(),
            ));
            k += 3;
        }
        let resume = std::env::var("TIMING_RESUME").is_ok();
        let out_ckpt = if resume {
            Path::new("/tmp/probe2.ckpt")
        } else {
            ckpt
        };
        let mut model = if resume {
            tsviz_core::checkpoint::load_checkpoint(ckpt).unwrap()
        } else {
            TeacherStudentModel::new(NetworkConfig::default(), seed).unwrap()
        };
        // TIMING_OVERFIT: train on the 64-sample set instead, validating on
        // a slice of it. TIMING_WHOLE: one train() call per phase, the exact
        // call pattern of the release tests.
        let (tp, vp) = if std::env::var("TIMING_OVERFIT").is_ok() {
            let small = generate(&GenSpec {
                per_class: 16,
                ..GenSpec::default()
            })
            .unwrap();
            let mut all = small.train_pairs();
            all.extend(small.validation_pairs());
            let probe = all[..8].to_vec();
            (all, probe)
        } else {
            (train_pairs.clone(), val_pairs.clone())
        };
        let chunk_len = if std::env::var("TIMING_WHOLE").is_ok() {
            usize::MAX
        } else {
            5
        };
        let t = Instant::now();
        let mut done = 0;
        for (pi, &(palpha, plr, pe)) in phases.iter().enumerate() {
            let mut left = pe;
            while left > 0 {
                let cfg = TrainConfig {
                    learning_rate: plr,
                    alpha: palpha,
                    epochs: left.min(chunk_len),
                    batch_size: batch,
                    seed: seed + done as u64,
                    ..TrainConfig::default()
                };
                let report = trainer::train(&mut model, &tp, &vp, &cfg).unwrap();
                for e in &report.epochs {
                    println!(
                        "p{pi} a{palpha} epoch {:3}  lossT {:.4} lossS {:.4}  trainT {:.3} trainS {:.3}  valT {:.3} valS {:.3}",
                        done + e.epoch,
                        e.train_loss_teacher,
                        e.train_loss_student,
                        e.train_acc_teacher,
                        e.train_acc_student,
                        e.val_acc_teacher,
                        e.val_acc_student
                    );
                }
                done += left.min(chunk_len);
                left -= left.min(chunk_len);
                print_liveness(&mut model, &tp);
                std::io::stdout().flush().ok();
            }
        }
        println!("wall: {:.0} s", t.elapsed().as_secs_f64());
        tsviz_core::checkpoint::save_checkpoint(&model, out_ckpt).unwrap();
        println!("saved {}", out_ckpt.display());
        return;
    }

    // gradnorm: per-parameter gradient magnitudes on the saved checkpoint
    if mode == "gradnorm" {
        use tsviz_core::gradcheck::DiffLoss;
        use tsviz_core::model::BatchLoss;
        let mut model = tsviz_core::checkpoint::load_checkpoint(ckpt).unwrap();
        let batch: Vec<_> = train_pairs.iter().take(8).cloned().collect();
        let bl = BatchLoss::new(&mut model, &batch).unwrap();
        let (loss, grads) = bl.loss_and_gradients();
        println!("batch loss {loss:.4}");
        let norm = |t: &tsviz_core::tensor::Tensor| {
            t.data().iter().map(|v| v * v).sum::<f64>().sqrt()
        };
        for i in 0..bl.n_params() {
            let g = grads.get(i).map(norm).unwrap_or(0.0);
            let w = norm(bl.param_value(i));
            println!(
                "{:30} |g| {:9.3e}  |w| {:9.3e}  g/w {:9.3e}",
                bl.param_name(i),
                g,
                w,
                g / w.max(1e-12)
            );
        }
        return;
    }

    // stages: per-stage activation spread over 8 images; arg = fresh-init seed,
    // no arg = the saved checkpoint.
    if mode == "stages" {
        let model = match args.get(2).and_then(|s| s.parse::<u64>().ok()) {
            Some(s) => TeacherStudentModel::new(NetworkConfig::default(), s).unwrap(),
            None => tsviz_core::checkpoint::load_checkpoint(ckpt).unwrap(),
        };
        let mut per_stage: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
        for (img, _) in val_pairs.iter().take(8) {
            let fg = model.full_graph(img).unwrap();
            let mut push = |name: &str, id: tsviz_core::autodiff::NodeId, acc: &mut Vec<(String, Vec<Vec<f64>>)>| {
                let data = fg.graph.value(id).data().to_vec();
                match acc.iter_mut().find(|(n, _)| n == name) {
                    Some((_, rows)) => rows.push(data),
                    None => acc.push((name.to_string(), vec![data])),
                }
            };
            push("image", fg.image, &mut per_stage);
            for (k, &s) in fg.teacher_skips.iter().enumerate() {
                push(&format!("skip{}", k + 1), s, &mut per_stage);
            }
            push("fc2", fg.teacher_fc2, &mut per_stage);
            for (k, &b) in fg.decoder_blocks.iter().enumerate() {
                push(&format!("deconv{}", fg.decoder_blocks.len() - k), b, &mut per_stage);
            }
            push("v", fg.v, &mut per_stage);
        }
        for (name, rows) in &per_stage {
            let n = rows.len() as f64;
            let px = rows[0].len();
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let mean = flat.iter().sum::<f64>() / flat.len() as f64;
            let var = flat.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / flat.len() as f64;
            let mut between = 0.0;
            for k in 0..px {
                let m: f64 = rows.iter().map(|r| r[k]).sum::<f64>() / n;
                between += rows.iter().map(|r| (r[k] - m).powi(2)).sum::<f64>() / n;
            }
            println!(
                "{:8} mean {:8.4} std {:8.4} between-image std {:8.5}",
                name,
                mean,
                var.sqrt(),
                (between / px as f64).sqrt()
            );
        }
        return;
    }

    if mode == "stats" {
        let model = tsviz_core::checkpoint::load_checkpoint(ckpt).unwrap();
        let mut vs: Vec<Vec<f64>> = Vec::new();
        let mut logit_rows: Vec<Vec<f64>> = Vec::new();
        for (img, label) in val_pairs.iter().take(8) {
            let out = model.forward(img).unwrap();
            vs.push(out.v.data().to_vec());
            println!(
                "label {}  ys {:?}",
                label,
                out.ys.data().iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>()
            );
            logit_rows.push(out.ys.data().to_vec());
        }
        let n = vs.len();
        let px = vs[0].len();
        let mut between = 0.0;
        for k in 0..px {
            let mean: f64 = vs.iter().map(|v| v[k]).sum::<f64>() / n as f64;
            between += vs.iter().map(|v| (v[k] - mean).powi(2)).sum::<f64>() / n as f64;
        }
        let vmean: f64 = vs.iter().flatten().sum::<f64>() / (n * px) as f64;
        let vvar: f64 =
            vs.iter().flatten().map(|v| (v - vmean).powi(2)).sum::<f64>() / (n * px) as f64;
        println!(
            "v: mean {:.4} std {:.4}  between-image std {:.6}",
            vmean,
            vvar.sqrt(),
            (between / px as f64).sqrt()
        );
        return;
    }

    // probe: explanation quality on the saved model
    let model = tsviz_core::checkpoint::load_checkpoint(ckpt).unwrap();
    let t = Instant::now();
    let subset: Vec<_> = val_pairs.iter().take(16).cloned().collect();
    let cmp = perturb::compare_methods(&model, &subset, &Method::ALL, ScoreClass::Predicted).unwrap();
    for r in &cmp.results {
        println!("aopc {:10} = {:.4}", r.method.name(), r.mean_aopc);
    }
    println!("aopc wall: {:.1} s", t.elapsed().as_secs_f64());

    // background deactivation + IoU probes
    let mut bg_total = 0usize;
    let mut bg_low = 0usize;
    let mut prop_low_mass = 0usize;
    let mut grad_low_mass = 0usize;
    let mut all_px = 0usize;
    let mut iou_prop = Vec::new();
    let mut iou_grad = Vec::new();
    for s in split.validation.iter().take(32) {
        let heat = viz::reconstruction_heatmap(&model, &s.image).unwrap();
        let sal = viz::gradient_saliency(&model, &s.image, None).unwrap();
        let size = heat.shape()[0];
        for i in 0..size {
            for j in 0..size {
                let v = heat.data()[i * size + j];
                let g = sal.data()[i * size + j];
                all_px += 1;
                if v < 0.05 {
                    prop_low_mass += 1;
                }
                if g < 0.05 {
                    grad_low_mass += 1;
                }
                if !s.leaf_mask.get(i, j) {
                    bg_total += 1;
                    if v < 0.05 {
                        bg_low += 1;
                    }
                }
            }
        }
        if s.label > 0 {
            let pm = viz::threshold_mask(&heat, 0.9).unwrap();
            let gm = viz::threshold_mask(&sal, 0.9).unwrap();
            iou_prop.push(perturb::localization_iou(&pm, &s.lesion_mask).unwrap());
            iou_grad.push(perturb::localization_iou(&gm, &s.lesion_mask).unwrap());
        }
    }
    println!(
        "background<0.05: {:.3}  prop mass<0.05: {:.3}  grad mass<0.05: {:.3}",
        bg_low as f64 / bg_total as f64,
        prop_low_mass as f64 / all_px as f64,
        grad_low_mass as f64 / all_px as f64
    );
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "iou proposed: {:.3}  iou gradient: {:.3}  (n={})",
        mean(&iou_prop),
        mean(&iou_grad),
        iou_prop.len()
    );
}
