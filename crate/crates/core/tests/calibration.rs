// Temporary calibration probes. Run with:
//   cargo test -p patchlab-core --test calibration -- --ignored --nocapture

use patchlab_core::patch::{
    init_virtual, prepare_examples, train, InitStrategy, Optimizer, TrainConfig,
    TrainExample, INIT_TEXT_FULL,
};
use patchlab_core::prompt::{assemble, DetectionMode, PromptTemplate};
use patchlab_core::toyvlm::model::{answer_targets, answer_yes_no, Answer};
use patchlab_core::world::{
    generate_corpus, make_pope_qa, question_tokens, CorpusConfig, DetectionOracle,
    OracleConfig, QASample, SceneDetections, Split,
};
use patchlab_core::{Model, Scene, VlmConfig};

struct Bench {
    scenes: Vec<Scene>,
    dets: Vec<SceneDetections>,
    train_qa: Vec<QASample>,
    test_qa: Vec<QASample>,
}

fn bench(model: &Model, scenes_n: usize, seed: u64) -> Bench {
    let cfg = CorpusConfig {
        categories: model.cfg().categories,
        scenes: scenes_n,
        seed,
        ..CorpusConfig::default()
    };
    let scenes = generate_corpus(&cfg).unwrap();
    let stats = patchlab_core::world::CooccurStats::from_scenes(&scenes, cfg.categories);
    let oracle = DetectionOracle::new(
        OracleConfig::default(),
        cfg.categories,
        model.cfg().coord_bins,
        Some(stats),
    )
    .unwrap();
    let dets = oracle.detect_all(&scenes, seed.wrapping_add(1));
    let (qa, _) = make_pope_qa(&scenes, cfg.categories, 3, seed.wrapping_add(2)).unwrap();
    let (train_qa, test_qa): (Vec<_>, Vec<_>) =
        qa.into_iter().partition(|s| s.split == Split::Train);
    Bench { scenes, dets, train_qa, test_qa }
}

fn f1(model: &Model, b: &Bench, template: PromptTemplate, n: usize, delta: Option<&patchlab_core::Tensor2>) -> (f64, f64, f64) {
    let mut tp = 0u32;
    let mut fp_ = 0u32;
    let mut fn_ = 0u32;
    let mut tn = 0u32;
    let scene_by_id: std::collections::HashMap<u64, &Scene> =
        b.scenes.iter().map(|s| (s.id, s)).collect();
    let dets_by_id: std::collections::HashMap<u64, &SceneDetections> =
        b.dets.iter().map(|d| (d.scene_id, d)).collect();
    let empty = Vec::new();
    let mut cache: std::collections::HashMap<u64, patchlab_core::Tensor2> =
        std::collections::HashMap::new();
    for s in &b.test_qa {
        let scene = scene_by_id[&s.scene_id];
        let det_list = if template.takes_detections() {
            &dets_by_id[&s.scene_id].outcome.detections
        } else {
            &empty
        };
        let q = question_tokens(s.category, model.vocab()).unwrap();
        let seq = assemble(
            template,
            model.cfg().image_slots(),
            det_list,
            DetectionMode::Category,
            &q,
            n,
            model.vocab(),
            None,
        )
        .unwrap();
        let feats = cache
            .entry(s.scene_id)
            .or_insert_with(|| model.encode_scene(scene).unwrap())
            .clone();
        let fp = model.forward(&feats, &seq, delta).unwrap();
        let (ans, _, _) = answer_yes_no(fp.logits().row(seq.len() - 1), model.vocab());
        match (s.label, ans) {
            (Answer::Yes, Answer::Yes) => tp += 1,
            (Answer::Yes, Answer::No) => fn_ += 1,
            (Answer::No, Answer::Yes) => fp_ += 1,
            (Answer::No, Answer::No) => tn += 1,
        }
    }
    let acc = (tp + tn) as f64 / (tp + tn + fp_ + fn_) as f64 * 100.0;
    let prec = if tp + fp_ > 0 { tp as f64 / (tp + fp_) as f64 * 100.0 } else { 0.0 };
    let rec = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 * 100.0 } else { 0.0 };
    let f = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
    (acc, f, tp as f64 + fp_ as f64)
}

fn overfit(model: &Model, n: usize, lr: f64, epochs: usize) -> (f64, Vec<f64>) {
    let scene = Scene {
        id: 0,
        objects: vec![patchlab_core::SceneObject {
            category: 12,
            bbox: [0.1, 0.2, 0.55, 0.7],
        }],
    };
    let oracle = DetectionOracle::new(
        OracleConfig::default(),
        model.cfg().categories,
        model.cfg().coord_bins,
        None,
    )
    .unwrap();
    let dets = oracle.detect(&scene, 0).detections;
    let question = question_tokens(12, model.vocab()).unwrap();
    let seq = assemble(
        PromptTemplate::PatchStandard,
        model.cfg().image_slots(),
        &dets,
        DetectionMode::Category,
        &question,
        n,
        model.vocab(),
        Some(Answer::Yes.token_id(model.vocab())),
    )
    .unwrap();
    let ex = TrainExample { features: model.encode_scene(&scene).unwrap(), seq };
    let strat = InitStrategy::Text(INIT_TEXT_FULL.into());
    let mut block = init_virtual(&model, n, &strat, 5).unwrap();
    let cfg = TrainConfig {
        n,
        init: strat,
        epochs,
        lr_init: lr,
        lr_floor: lr * 1e-3,
        weight_decay: 0.01,
        ..TrainConfig::default()
    };
    let r = train(&model, &mut block, &[ex.clone()], &cfg).unwrap();
    let mut fp = model.forward(&ex.features, &ex.seq, Some(block.matrix())).unwrap();
    let _ = fp.add_answer_loss(&ex.seq).unwrap();
    let targets = answer_targets(&ex.seq).unwrap();
    let mut rows = Vec::new();
    for &(row, tgt) in &targets {
        let r = fp.logits().row(row);
        let mx = r.iter().cloned().fold(f64::MIN, f64::max);
        let lse = mx + r.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln();
        rows.push(((lse - r[tgt]) * 100.0).round() / 100.0);
    }
    (r.final_loss, rows)
}

fn variant(name: &str, cfg: VlmConfig) {
    let model = Model::new(cfg).unwrap();
    let ovf: Vec<f64> = [2.0, 1.0, 0.5, 0.25]
        .iter()
        .map(|&lr| {
            let (loss, _) = overfit(&model, 20, lr, 200);
            (loss * 1000.0).round() / 1000.0
        })
        .collect();
    let b = bench(&model, 60, 1);
    let (acc1, f1_1, yes1) = f1(&model, &b, PromptTemplate::P1Baseline, 0, None);
    let (acc2, f1_2, yes2) = f1(&model, &b, PromptTemplate::P2Hard, 0, None);
    println!(
        "{name:<26} overfit(lr 2/1/.5/.25) {ovf:?} | P1 acc {acc1:5.1} f1 {f1_1:5.1} yes {yes1:4.0} | P2 acc {acc2:5.1} f1 {f1_2:5.1} yes {yes2:4.0} | train_qa {}",
        b.train_qa.len()
    );
}

#[test]
#[ignore]
fn circuit_probe() {
    let model = Model::new(VlmConfig::default()).unwrap();
    let v = model.vocab();
    let scene = Scene {
        id: 0,
        objects: vec![
            patchlab_core::SceneObject { category: 3, bbox: [0.1, 0.2, 0.5, 0.7] },
            patchlab_core::SceneObject { category: 9, bbox: [0.55, 0.1, 0.9, 0.4] },
        ],
    };
    let oracle = DetectionOracle::new(
        OracleConfig::default(),
        model.cfg().categories,
        model.cfg().coord_bins,
        None,
    )
    .unwrap();
    let dets = oracle.detect(&scene, 0).detections;
    let feats = model.encode_scene(&scene).unwrap();
    let d = model.cfg().dim;
    // Recover g from the yes/no embedding difference.
    let yes = model.params().embed.row(v.yes_id() as usize);
    let no = model.params().embed.row(v.no_id() as usize);
    let mut g: Vec<f64> = yes.iter().zip(no).map(|(a, b)| a - b).collect();
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    g.iter_mut().for_each(|x| *x /= norm);

    let text_block = init_virtual(
        &model,
        20,
        &InitStrategy::Text(INIT_TEXT_FULL.into()),
        0,
    )
    .unwrap();
    for (name, qcat, tpl, n) in [
        ("present cat 3", 3usize, PromptTemplate::P2Hard, 0),
        ("absent cat 17", 17usize, PromptTemplate::P2Hard, 0),
        ("patch present cat 3", 3usize, PromptTemplate::PatchStandard, 20),
        ("patch absent cat 17", 17usize, PromptTemplate::PatchStandard, 20),
    ] {
        let q = question_tokens(qcat, v).unwrap();
        let seq = assemble(
            tpl,
            model.cfg().image_slots(),
            &dets,
            DetectionMode::Category,
            &q,
            n,
            v,
            None,
        )
        .unwrap();
        let delta = if n > 0 { Some(text_block.matrix()) } else { None };
        let fp = model.forward(&feats, &seq, delta).unwrap();
        let s = seq.len();
        let last = s - 1;
        println!("== {name}: len {s}");
        let words: Vec<String> =
            seq.ids.iter().map(|&id| v.token(id).unwrap_or("?").to_string()).collect();
        println!("tail tokens: {:?}", &words[66..]);
        for (l, h, tag) in [(0, 0, "prev"), (0, 1, "back4"), (1, 0, "match"), (1, 1, "spare")] {
            let p = fp.attn_probs(l, h);
            let row: Vec<f64> = (0..s).map(|i| p.get(last, i)).collect();
            let mut top: Vec<(usize, f64)> =
                row.iter().cloned().enumerate().filter(|(_, w)| *w > 0.02).collect();
            top.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            top.truncate(6);
            let show: Vec<String> =
                top.iter().map(|(i, w)| format!("{}@{i}={w:.2}", words[*i])).collect();
            println!("L{l}H{h} {tag:<5} at ?: {}", show.join(" "));
        }
        // Attention of the match head at the first "{" position, and of the
        // prev head there (should hit the category token before it).
        let first_brace = seq.ids.iter().position(|&id| id == v.lbrace_id()).unwrap();
        let p = fp.attn_probs(0, 0);
        let row: Vec<f64> = (0..s).map(|i| p.get(first_brace, i)).collect();
        let mut top: Vec<(usize, f64)> =
            row.iter().cloned().enumerate().filter(|(_, w)| *w > 0.02).collect();
        top.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        top.truncate(4);
        let show: Vec<String> =
            top.iter().map(|(i, w)| format!("{}@{i}={w:.2}", words[*i])).collect();
        println!("L0H0 prev at {{@{first_brace}: {}", show.join(" "));
        let (ans, ly, ln_) = answer_yes_no(fp.logits().row(last), v);
        println!("answer {ans:?} yes {ly:.3} no {ln_:.3} diff {:.3}", ly - ln_);
    }

    // Manual layer-0 head-0 scores at the final position: which part of the
    // q/k dot carries the offset signal and which part pollutes it.
    let q0 = question_tokens(3, v).unwrap();
    let seq = assemble(
        PromptTemplate::P2Hard,
        model.cfg().image_slots(),
        &dets,
        DetectionMode::Category,
        &q0,
        0,
        v,
        None,
    )
    .unwrap();
    let p = model.params();
    let dim = model.cfg().dim;
    let dh = model.cfg().head_dim();
    let xhat = |j: usize| -> Vec<f64> {
        let id = seq.ids[j] as usize;
        let x: Vec<f64> = (0..dim).map(|i| p.embed.get(id, i) + p.pos.get(j, i)).collect();
        let mu = x.iter().sum::<f64>() / dim as f64;
        let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / dim as f64;
        x.iter().map(|v| (v - mu) / (var + 1e-5).sqrt()).collect()
    };
    let head_dot = |a: &[f64], b: &[f64], h: usize, lo: usize, hi: usize| -> f64 {
        let wq = &p.layers[0].wq;
        let wk = &p.layers[0].wk;
        let mut s = 0.0;
        for c in lo..hi {
            let mut q = 0.0;
            let mut k = 0.0;
            for t in 0..dim {
                q += a[t] * wq.get(t, h * dh + c);
                k += b[t] * wk.get(t, h * dh + c);
            }
            s += q * k;
        }
        s / (dh as f64).sqrt()
    };
    let j = seq.len() - 1;
    let qv = xhat(j);
    println!("layer0 h0 scores from ?@{j} (phase cols | noise cols):");
    for i in (j - 6)..=j {
        let kv = xhat(i);
        let ph = head_dot(&qv, &kv, 0, 0, 8);
        let ns = head_dot(&qv, &kv, 0, 8, dh);
        println!("  -> {}@{i}: phase {ph:7.3} noise {ns:7.3}", v.token(seq.ids[i]).unwrap());
    }
    // Per-position k phase-block norms: clean carrier reading means equal
    // norms; token-dependent norms mean the embedding leaks into the phase
    // columns.
    let wk = &p.layers[0].wk;
    for i in (j - 6)..=j {
        let kv = xhat(i);
        let mut k8 = vec![0.0; 8];
        for (c, slot) in k8.iter_mut().enumerate() {
            for t in 0..dim {
                *slot += kv[t] * wk.get(t, c);
            }
        }
        let n = k8.iter().map(|v| v * v).sum::<f64>().sqrt();
        // Split: reading of pure pos row vs pure embed row.
        let id = seq.ids[i] as usize;
        let mut ke = vec![0.0; 8];
        let mut kp = vec![0.0; 8];
        for (c, (se, sp)) in ke.iter_mut().zip(kp.iter_mut()).enumerate() {
            for t in 0..dim {
                *se += p.embed.get(id, t) * wk.get(t, c);
                *sp += p.pos.get(i, t) * wk.get(t, c);
            }
        }
        let ne = ke.iter().map(|v| v * v).sum::<f64>().sqrt();
        let np = kp.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!(
            "  k8 {}@{i}: |k8(xhat)| {n:6.3} |k8(embed)| {ne:6.3} |k8(pos)| {np:6.3}",
            v.token(seq.ids[i]).unwrap()
        );
    }
}

#[test]
#[ignore]
fn knob_survey() {
    variant("default", VlmConfig::default());
    for seed in [1u64, 7, 42] {
        variant(&format!("seed{seed}"), VlmConfig { seed, ..VlmConfig::default() });
    }
    for seed in [1u64, 7, 42] {
        variant(
            &format!("seed{seed}_sp.2"),
            VlmConfig { seed, spare_std: 0.2, ..VlmConfig::default() },
        );
    }
    variant("spare0.2", VlmConfig { spare_std: 0.2, ..VlmConfig::default() });
    variant("qmark-0.3", VlmConfig { qmark_align: -0.3, ..VlmConfig::default() });
    variant("qmark-0.8", VlmConfig { qmark_align: -0.8, ..VlmConfig::default() });
}

#[test]
#[ignore]
fn train_probe() {
    let model = Model::new(VlmConfig::default()).unwrap();
    let b = bench(&model, 60, 1);
    let (acc1, f1_, yes1) = f1(&model, &b, PromptTemplate::P1Baseline, 0, None);
    let (acc2, f2, yes2) = f1(&model, &b, PromptTemplate::P2Hard, 0, None);
    println!("P1 acc {acc1:5.1} f1 {f1_:5.1} yes {yes1}");
    println!("P2 acc {acc2:5.1} f1 {f2:5.1} yes {yes2}");
    let base = TrainConfig {
        init: InitStrategy::Text(INIT_TEXT_FULL.into()),
        ..TrainConfig::default()
    };
    let init_block = init_virtual(&model, base.n, &base.init, base.seed).unwrap();
    let (acc0, f0, yes0) = f1(&model, &b, base.template, base.n, Some(init_block.matrix()));
    println!("PATCH@init(text) acc {acc0:5.1} f1 {f0:5.1} yes {yes0}");
    let rnd_block = init_virtual(&model, base.n, &InitStrategy::Random, base.seed).unwrap();
    let (accr, fr, yesr) = f1(&model, &b, base.template, base.n, Some(rnd_block.matrix()));
    println!("PATCH@init(rand) acc {accr:5.1} f1 {fr:5.1} yes {yesr}");
    {
        // Isolate init handicaps: pad rows, g-marked rows, n=17.
        let ids = model.vocab().tokenize(INIT_TEXT_FULL).unwrap();
        let d = model.cfg().dim;
        let emb = &model.params().embed;
        let yes = emb.row(model.vocab().yes_id() as usize);
        let no = emb.row(model.vocab().no_id() as usize);
        let g: Vec<f64> = {
            let diff: Vec<f64> = yes.iter().zip(no).map(|(a, b)| a - b).collect();
            let n = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
            diff.iter().map(|x| x / n).collect()
        };
        let mk = |n: usize, cycle: bool, strip_g: bool| {
            let mut m = patchlab_core::Tensor2::zeros(n, d);
            for r in 0..n {
                if r >= ids.len() && !cycle {
                    continue;
                }
                let row = emb.row(ids[r % ids.len()] as usize);
                let go = if strip_g { row.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() } else { 0.0 };
                for i in 0..d {
                    m.set(r, i, row[i] - go * g[i]);
                }
            }
            m
        };
        for (name, m) in [
            ("n17 text", mk(17, false, false)),
            ("n20 cycle", mk(20, true, false)),
            ("n20 cycle nog", mk(20, true, true)),
            ("n20 zeros nog", mk(20, false, true)),
        ] {
            let (a, f, y) = f1(&model, &b, base.template, m.rows(), Some(&m));
            println!("PATCH@init({name}) acc {a:5.1} f1 {f:5.1} yes {y}");
        }
    }
    let ex = prepare_examples(
        &model,
        &b.train_qa,
        &b.scenes,
        &b.dets,
        base.template,
        base.det_mode,
        base.n,
    )
    .unwrap();
    // Init loss surface: mean CE and per-row answer ranks.
    let mut ce_sum = 0.0;
    let mut shown = 0;
    for e in &ex {
        let fp = model.forward(&e.features, &e.seq, Some(init_block.matrix())).unwrap();
        let targets = patchlab_core::toyvlm::model::answer_targets(&e.seq).unwrap();
        for &(row, tgt) in &targets {
            let r = fp.logits().row(row);
            let mx = r.iter().cloned().fold(f64::MIN, f64::max);
            let lse = mx + r.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln();
            ce_sum += lse - r[tgt];
            if shown < 2 {
                shown += 1;
                let mut idx: Vec<usize> = (0..r.len()).collect();
                idx.sort_by(|&a, &bb| r[bb].partial_cmp(&r[a]).unwrap());
                let tops: Vec<String> = idx
                    .iter()
                    .take(6)
                    .map(|&i| {
                        format!(
                            "{}={:.2}",
                            model.vocab().token(i as u32).unwrap_or("?"),
                            r[i]
                        )
                    })
                    .collect();
                println!(
                    "  init row: target {} logit {:.2} | top: {}",
                    model.vocab().token(tgt as u32).unwrap_or("?"),
                    r[tgt],
                    tops.join(" ")
                );
            }
        }
    }
    println!("  init mean CE {:.3}", ce_sum / ex.len() as f64);
    let adam = Optimizer::AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8 };
    for (name, opt, lr, epochs) in [
        ("sgd", Optimizer::Sgd, 0.2, 40),
        ("adam", adam.clone(), 0.05, 15),
        ("adam", adam.clone(), 0.02, 15),
        ("adam", adam.clone(), 0.05, 40),
        ("adam", adam.clone(), 0.1, 40),
    ] {
        let cfg = TrainConfig {
            lr_init: lr,
            lr_floor: lr * 0.01,
            epochs,
            optimizer: opt,
            ..base.clone()
        };
        let mut block = init_block.clone();
        let r = train(&model, &mut block, &ex, &cfg).unwrap();
        let (acc, f, yes) = f1(&model, &b, cfg.template, cfg.n, Some(block.matrix()));
        let first = r.epoch_losses.first().copied().unwrap_or(f64::NAN);
        println!(
            "PATCH {name} lr {lr:<5} ep {epochs:<3} loss {first:6.3} -> {:6.3} | acc {acc:5.1} f1 {f:5.1} yes {yes}",
            r.final_loss
        );
    }
}

#[test]
#[ignore]
fn bench_probe() {
    use patchlab_core::patch::INIT_TEXT_BRIEF;
    use std::time::Instant;
    let model = Model::new(VlmConfig::default()).unwrap();
    let b = bench(&model, 300, 1);
    println!("train qa {} test qa {}", b.train_qa.len(), b.test_qa.len());
    let t0 = Instant::now();
    let (acc1, f1_, yes1) = f1(&model, &b, PromptTemplate::P1Baseline, 0, None);
    println!("P1 acc {acc1:5.1} f1 {f1_:5.1} yes {yes1} ({:.1}s)", t0.elapsed().as_secs_f64());
    let t0 = Instant::now();
    let (acc2, f2, yes2) = f1(&model, &b, PromptTemplate::P2Hard, 0, None);
    println!("P2 acc {acc2:5.1} f1 {f2:5.1} yes {yes2} ({:.1}s)", t0.elapsed().as_secs_f64());
    let base = TrainConfig {
        init: InitStrategy::Text(INIT_TEXT_FULL.into()),
        ..TrainConfig::default()
    };
    for (name, strat) in [
        ("T2", InitStrategy::Text(INIT_TEXT_FULL.into())),
        ("T1", InitStrategy::Text(INIT_TEXT_BRIEF.into())),
        ("rand", InitStrategy::Random),
    ] {
        let blk = init_virtual(&model, base.n, &strat, base.seed).unwrap();
        let (a, f, y) = f1(&model, &b, base.template, base.n, Some(blk.matrix()));
        println!("PATCH@init({name}) acc {a:5.1} f1 {f:5.1} yes {y}");
    }
    let ex = prepare_examples(
        &model,
        &b.train_qa,
        &b.scenes,
        &b.dets,
        base.template,
        base.det_mode,
        base.n,
    )
    .unwrap();
    for (strat_name, strat, lr, epochs) in [
        ("T2", InitStrategy::Text(INIT_TEXT_FULL.into()), 0.2, 10),
        ("T2", InitStrategy::Text(INIT_TEXT_FULL.into()), 0.1, 10),
        ("T2", InitStrategy::Text(INIT_TEXT_FULL.into()), 0.05, 10),
        ("T1", InitStrategy::Text(INIT_TEXT_BRIEF.into()), 0.1, 10),
        ("T2", InitStrategy::Text(INIT_TEXT_FULL.into()), 0.1, 15),
        ("T2", InitStrategy::Text(INIT_TEXT_FULL.into()), 0.002, 10),
    ] {
        let cfg = TrainConfig {
            init: strat,
            lr_init: lr,
            lr_floor: lr * 0.0025,
            epochs,
            ..base.clone()
        };
        let mut block = init_virtual(&model, cfg.n, &cfg.init, cfg.seed).unwrap();
        let t0 = Instant::now();
        let r = train(&model, &mut block, &ex, &cfg).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        let (acc, f, yes) = f1(&model, &b, cfg.template, cfg.n, Some(block.matrix()));
        let first = r.epoch_losses.first().copied().unwrap_or(f64::NAN);
        println!(
            "PATCH {strat_name} sgd lr {lr:<5} ep {epochs:<3} loss {first:6.3} -> {:6.3} | acc {acc:5.1} f1 {f:5.1} yes {yes} ({dt:.1}s train)",
            r.final_loss
        );
    }
}
