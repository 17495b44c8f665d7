// Scratch harness for sizing the toy experiments. Not part of the
// test suite; run with: cargo run --release --example precheck -- <which>
use posegen::clop::{self, Clop, ClopConfig, ClopTag, ClopTrainConfig, TextInput, Vocabulary};
use posegen::data;
use posegen::diffusion::{
    ancestral_sample, eval_alignment_distance, strided_timesteps, train_dit, DitDenoiser,
    DitTrainConfig, NoiseSchedule,
};
use posegen::dit::{DitConfig, LamaMetric, MotionDit};
use posegen::metrics::{self, FeatureSet};
use posegen::pose::PoseSequence;
use posegen::tensor::Tensor;
use posegen::vae::{recon_loss, train_vae, LatentSequence, PoseVae, VaeConfig, VaeTrainConfig};

fn normalized_set(items: &[data::SynthItem]) -> Vec<(String, PoseSequence)> {
    let dims = data::canvas_dims();
    items
        .iter()
        .map(|it| (it.caption.clone(), it.pose.normalize_coordinates(dims).unwrap()))
        .collect()
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "vae".to_string());
    let t0 = std::time::Instant::now();
    match which.as_str() {
        "vae" => {
            let items = data::synth_dataset(256, 64, 11);
            let set = normalized_set(&items);
            let tensors: Vec<Tensor<f32>> = set.iter().map(|(_, p)| p.to_tensor()).collect();
            let mut vae = PoseVae::<f32>::new(
                VaeConfig { keypoints: 128, latent_channels: 4, widths: [8, 16, 32], use_skips: true },
                0,
            )
            .unwrap();
            let stats = train_vae(
                &mut vae,
                &tensors,
                &VaeTrainConfig { steps: 2000, batch_size: 1, lr: 1e-3, beta: 1e-7, seed: 0, snapshot_every: 100 },
            )
            .unwrap();
            println!("train stats: {stats:?}");
            let mut mse = 0.0;
            for t in tensors.iter().take(32) {
                let r = vae.reconstruct_tensor(t).unwrap();
                mse += recon_loss(t, &r).unwrap() / t.len() as f64;
            }
            println!("eval recon mse (skips on): {}", mse / 32.0);
        }
        "vae_noskip" => {
            let items = data::synth_two_class(100, 16, 21);
            let set = normalized_set(&items);
            let tensors: Vec<Tensor<f32>> = set.iter().map(|(_, p)| p.to_tensor()).collect();
            let mut vae = PoseVae::<f32>::new(
                VaeConfig { keypoints: 128, latent_channels: 4, widths: [8, 16, 32], use_skips: false },
                0,
            )
            .unwrap();
            let stats = train_vae(
                &mut vae,
                &tensors,
                &VaeTrainConfig { steps: 2000, batch_size: 1, lr: 1e-3, beta: 1e-7, seed: 0, snapshot_every: 100 },
            )
            .unwrap();
            println!("train stats: {stats:?}");
            let mut mse = 0.0;
            for t in tensors.iter().take(32) {
                let r = vae.reconstruct_tensor(t).unwrap();
                mse += recon_loss(t, &r).unwrap() / t.len() as f64;
            }
            println!("eval recon mse (no skips): {}", mse / 32.0);
        }
        "clop" => {
            let items = data::synth_dataset(200, 64, 31);
            let set = normalized_set(&items);
            let vocab = Vocabulary::build(set.iter().map(|(c, _)| c.as_str()));
            let mut model = Clop::<f32>::new(
                ClopConfig { vocab_size: vocab.len(), keypoints: 128, width: 64, layers: 2, heads: 4, embed_dim: 256 },
                vocab,
                ClopTag::Eval,
                0,
            )
            .unwrap();
            let pairs: Vec<(TextInput, PoseSequence)> = set
                .iter()
                .map(|(c, p)| (TextInput::from_caption(model.vocab(), c).unwrap(), p.clone()))
                .collect();
            let stats = clop::train_clop(
                &mut model,
                &pairs,
                &ClopTrainConfig { steps: 3000, batch_size: 16, lr: 1e-3, seed: 0, fixed_tau: None },
            )
            .unwrap();
            println!("loss {} -> {}", stats.initial_loss, stats.final_loss);
            // train-set retrieval
            let pose_rows: Vec<Vec<f64>> = set
                .iter()
                .map(|(_, p)| model.embed_pose(p).unwrap().vector.iter().map(|&v| v as f64).collect())
                .collect();
            let text_rows: Vec<Vec<f64>> = set
                .iter()
                .map(|(c, _)| model.embed_caption(c).unwrap().vector.iter().map(|&v| v as f64).collect())
                .collect();
            let pfs = FeatureSet::from_rows(&pose_rows).unwrap();
            let tfs = FeatureSet::from_rows(&text_rows).unwrap();
            let (t1, t2, t3) = metrics::r_precision(&pfs, &tfs, 32, 0).unwrap();
            println!("train R-precision: top1 {t1} top2 {t2} top3 {t3}");
        }
        "dit" => {
            let steps: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(2000);
            // two-class f=16 pipeline
            let train_items = data::synth_two_class(100, 16, 41);
            let set = normalized_set(&train_items);
            let tensors: Vec<Tensor<f32>> = set.iter().map(|(_, p)| p.to_tensor()).collect();
            let mut vae = PoseVae::<f32>::new(
                VaeConfig { keypoints: 128, latent_channels: 4, widths: [8, 16, 32], use_skips: false },
                0,
            )
            .unwrap();
            let vs = train_vae(
                &mut vae,
                &tensors,
                &VaeTrainConfig { steps: 1500, batch_size: 1, lr: 1e-3, beta: 1e-7, seed: 0, snapshot_every: 100 },
            )
            .unwrap();
            println!("[{}s] vae recon mse {}", t0.elapsed().as_secs(), vs.final_recon_mse);

            let vocab = Vocabulary::build(set.iter().map(|(c, _)| c.as_str()));
            let mut cl = Clop::<f32>::new(
                ClopConfig { vocab_size: vocab.len(), keypoints: 128, width: 64, layers: 2, heads: 4, embed_dim: 256 },
                vocab,
                ClopTag::Eval,
                0,
            )
            .unwrap();
            let pairs: Vec<(TextInput, PoseSequence)> = set
                .iter()
                .map(|(c, p)| (TextInput::from_caption(cl.vocab(), c).unwrap(), p.clone()))
                .collect();
            let cs = clop::train_clop(
                &mut cl,
                &pairs,
                &ClopTrainConfig { steps: 1200, batch_size: 8, lr: 1e-3, seed: 0, fixed_tau: None },
            )
            .unwrap();
            println!("[{}s] clop loss {} -> {}", t0.elapsed().as_secs(), cs.initial_loss, cs.final_loss);

            // class centroids in clop space from the training poses
            let up_caption = data::MotionAttributes::canonical(data::Direction::Up).caption();
            let down_caption = data::MotionAttributes::canonical(data::Direction::Down).caption();
            let centroid = |want_up: bool| -> Vec<f64> {
                let mut acc = vec![0.0f64; 256];
                let mut n = 0;
                for (c, p) in &set {
                    if (c == &up_caption) == want_up {
                        let e = cl.embed_pose(p).unwrap();
                        for (a, &v) in acc.iter_mut().zip(&e.vector) {
                            *a += v as f64;
                        }
                        n += 1;
                    }
                }
                for a in acc.iter_mut() {
                    *a /= n as f64;
                }
                acc
            };
            let cen_up = centroid(true);
            let cen_down = centroid(false);

            let items = posegen::cli::build_dit_items(&set, &vae, &cl).unwrap();
            let schedule = NoiseSchedule::default_linear();
            let mut dit = MotionDit::<f32>::new(
                DitConfig {
                    layers: 6,
                    width: 64,
                    heads: 4,
                    patch: 2,
                    latent_points: 16,
                    latent_channels: 4,
                    cond_dim: clop::CONDITION_DIM,
                    lama_layer: 3,
                    lama_dim: 256,
                    lama_metric: LamaMetric::Cosine,
                    global_attention: true,
                    window_one: false,
                },
                0,
            )
            .unwrap();
            let ds = train_dit(
                &mut dit,
                &schedule,
                &items,
                &DitTrainConfig { steps, batch_size: 2, lr: 2e-4, lambda_f: 0.1, seed: 0, snapshot_every: 500 },
            )
            .unwrap();
            println!(
                "[{}s] dit {} steps: loss {} (l_d {}, l_f {})",
                t0.elapsed().as_secs(),
                ds.steps_run,
                ds.final_loss,
                ds.final_l_d,
                ds.final_l_f
            );
            let ad = eval_alignment_distance(&dit, &schedule, &items[..32], 7).unwrap();
            println!("alignment distance: {ad}");

            // sample 50 per class and classify
            let ts = strided_timesteps(1000, 50);
            let mut correct = 0;
            let mut total = 0;
            for (ci, caption) in [&up_caption, &down_caption].iter().enumerate() {
                let cond_vec = cl
                    .caption_condition(&TextInput::from_caption(cl.vocab(), caption).unwrap())
                    .unwrap();
                let cond = Tensor::new(vec![cond_vec.len()], cond_vec).unwrap();
                let den = DitDenoiser { model: &dit, text: cond, t_max: 1000 };
                for s in 0..50u64 {
                    let mut rng = rand::SeedableRng::seed_from_u64(1000 + 100 * ci as u64 + s);
                    let z0 =
                        ancestral_sample(&den, &schedule, &[16, 16, 4], &ts, &mut rng).unwrap();
                    let dec = vae.decode(&LatentSequence::new(z0).unwrap()).unwrap();
                    let seq =
                        PoseSequence::from_tensor(&dec, posegen::pose::default_layout()).unwrap();
                    let e = cl.embed_pose(&seq).unwrap();
                    let dist = |c: &Vec<f64>| -> f64 {
                        c.iter()
                            .zip(&e.vector)
                            .map(|(a, &b)| (a - b as f64) * (a - b as f64))
                            .sum::<f64>()
                    };
                    let pred_up = dist(&cen_up) < dist(&cen_down);
                    if pred_up == (ci == 0) {
                        correct += 1;
                    }
                    total += 1;
                }
            }
            println!(
                "[{}s] classification: {}/{} = {}",
                t0.elapsed().as_secs(),
                correct,
                total,
                correct as f64 / total as f64
            );
        }
        other => eprintln!("unknown precheck '{other}'"),
    }
    println!("elapsed: {:.1}s", t0.elapsed().as_secs_f64());
}
