use ndarray::Array2;
use packsense::binimage::BinaryImage;
use packsense::disasm::linear_sweep;
use packsense::encoder::{
    grad_check, read_checkpoint, train_finetune, train_pretrain, write_checkpoint, EncoderError, GradCheckFixture,
    LossPath, Model, ModelConfig, RegionLabel, TrainConfig,
};
use packsense::normalizer::{windowize_tokens, Normalizer, Token, TokenWindow, VOCAB_SIZE};
use packsense::simlm::maskable_positions;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random weights everywhere, layer-norm gains and biases included, so the
/// oracle comparison exercises every parameter.
fn scrambled(config: ModelConfig, seed: u64) -> Model<f64> {
    let mut m = Model::<f64>::new(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    m.params.for_each_mut(|_, t| t.mapv_inplace(|_| rng.gen_range(-0.5..0.5)));
    m
}

// Straightforward scalar-loop restatement of the encoder.
mod oracle {
    use super::*;

    pub type Mat = Vec<Vec<f64>>;

    pub fn get(a: &Array2<f64>) -> Mat {
        a.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    pub fn matmul(x: &Mat, w: &Mat, b: &[f64]) -> Mat {
        x.iter()
            .map(|row| {
                (0..w[0].len())
                    .map(|j| {
                        let mut s = b[j];
                        for k in 0..row.len() {
                            s += row[k] * w[k][j];
                        }
                        s
                    })
                    .collect()
            })
            .collect()
    }

    pub fn layer_norm(x: &Mat, g: &[f64], b: &[f64]) -> Mat {
        x.iter()
            .map(|row| {
                let n = row.len() as f64;
                let mean = row.iter().sum::<f64>() / n;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                row.iter().enumerate().map(|(i, v)| (v - mean) / (var + 1e-5).sqrt() * g[i] + b[i]).collect()
            })
            .collect()
    }

    fn add(a: &Mat, b: &Mat) -> Mat {
        a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
    }

    pub fn hidden(m: &Model<f64>, ids: &[usize], valid: &[bool]) -> Mat {
        let p = &m.params;
        let (tok, pos) = (get(&p.tok_emb), get(&p.pos_emb));
        let x: Mat = ids.iter().enumerate().map(|(i, &id)| tok[id].iter().zip(&pos[i]).map(|(a, b)| a + b).collect()).collect();
        let mut x = layer_norm(&x, &get(&p.emb_ln_g)[0], &get(&p.emb_ln_b)[0]);
        let heads = m.config.heads;
        let d = m.config.d_model;
        let dh = d / heads;
        for l in &p.layers {
            let row = |a: &Array2<f64>| get(a)[0].clone();
            let q = matmul(&x, &get(&l.wq), &row(&l.bq));
            let k = matmul(&x, &get(&l.wk), &row(&l.bk));
            let v = matmul(&x, &get(&l.wv), &row(&l.bv));
            let n = x.len();
            let mut ctx = vec![vec![0.0; d]; n];
            for h in 0..heads {
                for i in 0..n {
                    let mut scores = vec![f64::NEG_INFINITY; n];
                    for j in 0..n {
                        if valid[j] {
                            scores[j] = (0..dh).map(|c| q[i][h * dh + c] * k[j][h * dh + c]).sum::<f64>() / (dh as f64).sqrt();
                        }
                    }
                    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                    let z: f64 = e.iter().sum();
                    for c in 0..dh {
                        ctx[i][h * dh + c] = (0..n).map(|j| e[j] / z * v[j][h * dh + c]).sum();
                    }
                }
            }
            let attn = matmul(&ctx, &get(&l.wo), &row(&l.bo));
            let x1 = layer_norm(&add(&x, &attn), &row(&l.ln1_g), &row(&l.ln1_b));
            let pre = matmul(&x1, &get(&l.w1), &row(&l.b1));
            let act: Mat = pre
                .iter()
                .map(|r| r.iter().map(|&u| 0.5 * u * (1.0 + libm::erf(u / std::f64::consts::SQRT_2))).collect())
                .collect();
            let f = matmul(&act, &get(&l.w2), &row(&l.b2));
            x = layer_norm(&add(&x1, &f), &row(&l.ln2_g), &row(&l.ln2_b));
        }
        x
    }

    pub fn class_probs(m: &Model<f64>, ids: &[usize]) -> Vec<f64> {
        let valid: Vec<bool> = ids.iter().map(|&i| i != Token::PAD.id()).collect();
        let h = hidden(m, ids, &valid);
        let d = m.config.d_model;
        let n = valid.iter().filter(|&&v| v).count() as f64;
        let pooled: Vec<f64> = (0..d).map(|c| h.iter().zip(&valid).filter(|(_, &v)| v).map(|(r, _)| r[c]).sum::<f64>() / n).collect();
        let p = &m.params;
        let z: Mat = matmul(&vec![pooled], &get(&p.cls_w), &get(&p.cls_b)[0]).into_iter().map(|r| r.into_iter().map(f64::tanh).collect()).collect();
        let logits = &matmul(&z, &get(&p.out_w), &get(&p.out_b)[0])[0];
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }
}

#[test]
fn forward_matches_scalar_oracle() {
    let m = scrambled(ModelConfig::tiny(1, 8), 11);
    let ids = [Token::SOS.id(), 42, Token::EOS.id()];
    let enc = m.forward(&ids).unwrap();
    let want = oracle::hidden(&m, &ids, &[true; 3]);
    for (i, row) in want.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            assert!((enc.hidden[[i, c]] - v).abs() < 1e-6, "hidden[{i}][{c}]");
        }
    }
    for c in 0..8 {
        let mean = (want[0][c] + want[1][c] + want[2][c]) / 3.0;
        assert!((enc.pooled[c] - mean).abs() < 1e-6);
    }
    // Logits through the tied embeddings.
    let logits = m.mlm_logits(&enc.hidden).unwrap();
    let tok = oracle::get(&m.params.tok_emb);
    let bias = oracle::get(&m.params.mlm_bias);
    for i in 0..3 {
        for v in [0, 42, 499] {
            let want_l: f64 = bias[0][v] + (0..8).map(|c| want[i][c] * tok[v][c]).sum::<f64>();
            assert!((logits[[i, v]] - want_l).abs() < 1e-6);
        }
    }
}

#[test]
fn two_layer_masked_forward_matches_oracle() {
    let m = scrambled(ModelConfig::tiny(2, 8), 12);
    let ids = [Token::SOS.id(), 100, 200, Token::EOS.id(), Token::PAD.id(), Token::PAD.id()];
    let valid = [true, true, true, true, false, false];
    let enc = m.forward(&ids).unwrap();
    let want = oracle::hidden(&m, &ids, &valid);
    for i in 0..4 {
        for c in 0..8 {
            assert!((enc.hidden[[i, c]] - want[i][c]).abs() < 1e-6);
        }
    }
    let probs = m.class_probs(&ids).unwrap();
    for (a, b) in probs.iter().zip(oracle::class_probs(&m, &ids)) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn single_real_token_pools_to_its_state() {
    let m = Model::<f32>::new(ModelConfig::tiny(2, 16), 3).unwrap();
    let mut ids = vec![Token::PAD.id(); 10];
    ids[0] = Token::SOS.id();
    let enc = m.forward(&ids).unwrap();
    for c in 0..16 {
        assert_eq!(enc.pooled[c], enc.hidden[[0, c]]);
    }
}

#[test]
fn permutation_symmetry_without_positions() {
    let mut m = scrambled(ModelConfig::tiny(2, 16), 5);
    m.params.pos_emb.fill(0.0);
    let ids = [Token::SOS.id(), 30, 77, 150, 300, Token::EOS.id()];
    let perm = [300, Token::EOS.id(), 77, Token::SOS.id(), 150, 30];
    let a = m.forward(&ids).unwrap().pooled;
    let b = m.forward(&perm).unwrap().pooled;
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn padding_does_not_change_the_pooled_vector() {
    let m = Model::<f32>::new(ModelConfig::default(), 9).unwrap();
    let ids: Vec<usize> = [Token::SOS.id(), 40, 50, 60, Token::EOS.id()].to_vec();
    let base = m.forward(&ids).unwrap().pooled;
    for extra in [1, 7, 100] {
        let mut padded = ids.clone();
        padded.resize(ids.len() + extra, Token::PAD.id());
        let p = m.forward(&padded).unwrap().pooled;
        for (x, y) in base.iter().zip(&p) {
            assert!((x - y).abs() < 1e-6, "pad {extra}");
        }
    }
}

#[test]
fn tied_embedding_row_drives_its_logit_column() {
    let mut m = scrambled(ModelConfig::tiny(1, 8), 2);
    let ids = [Token::SOS.id(), 10, Token::EOS.id()];
    let hidden = m.forward(&ids).unwrap().hidden;
    let before = m.mlm_logits(&hidden).unwrap();
    m.params.tok_emb.row_mut(123).mapv_inplace(|v| v + 1.0);
    let after = m.mlm_logits(&hidden).unwrap();
    for v in 0..VOCAB_SIZE {
        let changed = (0..3).any(|i| before[[i, v]] != after[[i, v]]);
        assert_eq!(changed, v == 123, "column {v}");
    }
}

#[test]
fn zero_weights_give_uniform_loss() {
    let mut m = Model::<f64>::new(ModelConfig::tiny(1, 8), 0).unwrap();
    m.params.for_each_mut(|_, t| t.fill(0.0));
    let ids = [Token::SOS.id(), Token::MASK.id(), 5, Token::EOS.id()];
    let loss = m.mlm_loss_value(&ids, &[(1, 77), (2, 5)]);
    assert!((loss - (VOCAB_SIZE as f64).ln()).abs() < 1e-12);
}

fn gradcheck_fixture() -> GradCheckFixture {
    let ids = vec![
        Token::SOS.id(),
        Token::MASK.id(),
        33,
        250,
        Token::EOS.id(),
        140,
        Token::MASK.id(),
        Token::EOS.id(),
        Token::PAD.id(),
    ];
    GradCheckFixture { ids, targets: vec![(1, 60), (3, 250), (6, 300)], label: RegionLabel::PackedData }
}

#[test]
fn gradients_match_finite_differences() {
    let m = Model::<f64>::new(ModelConfig::tiny(2, 16), 21).unwrap();
    let fx = gradcheck_fixture();
    for path in [LossPath::MaskedLm, LossPath::Classifier] {
        let r = grad_check(&m, &fx, path, 1e-4, 12, 7);
        assert!(r.max_rel_error < 1e-4, "{path:?}: {:?}", r.per_tensor);
        assert!(r.per_tensor.len() >= 30);
    }
}

#[test]
fn unused_vocabulary_row_has_zero_gradient() {
    let m = Model::<f64>::new(ModelConfig::tiny(1, 8), 4).unwrap();
    let fx = gradcheck_fixture();
    let g = m.cls_gradients(&fx.ids, fx.label);
    assert!(g.tok_emb.row(499).iter().all(|&v| v == 0.0));
    let mut probe = m.clone();
    probe.params.tok_emb[[499, 3]] += 1e-4;
    let up = probe.cls_loss_value(&fx.ids, fx.label);
    assert!((up - m.cls_loss_value(&fx.ids, fx.label)).abs() < 1e-15);
}

#[test]
fn region_head_requires_finetuning_and_normalizes() {
    let mut m = Model::<f32>::new(ModelConfig::tiny(1, 16), 1).unwrap();
    let w = TokenWindow {
        tokens: vec![Token::SOS, Token::PAD_NORMAL, Token::EOS],
        spans: vec![(1, 3)],
        byte_start: 0,
        byte_end: 1,
        label: None,
    };
    assert!(matches!(m.classify_region(&w), Err(EncoderError::UntrainedHead)));
    m.finetuned = true;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        m.params.for_each_mut(|_, t| t.mapv_inplace(|_| rng.gen_range(-1.0..1.0)));
        let p = m.classify_region(&w).unwrap();
        assert!(p.iter().all(|&x| x >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn rejects_bad_shapes() {
    let m = Model::<f32>::new(ModelConfig::tiny(1, 8), 1).unwrap();
    assert!(matches!(m.forward(&[]), Err(EncoderError::ShapeMismatch(_))));
    assert!(matches!(m.forward(&vec![1; 513]), Err(EncoderError::ShapeMismatch(_))));
    assert!(matches!(m.forward(&[VOCAB_SIZE]), Err(EncoderError::ShapeMismatch(_))));
    assert!(matches!(m.mlm_logits(&Array2::zeros((2, 9))), Err(EncoderError::ShapeMismatch(_))));
    let bad = ModelConfig { heads: 3, ..ModelConfig::tiny(1, 8) };
    assert!(matches!(Model::<f32>::new(bad, 0), Err(EncoderError::InvalidConfig(_))));
}

#[test]
fn checkpoint_roundtrip_and_vocab_guard() {
    let mut m = Model::<f32>::new(ModelConfig::tiny(2, 16), 8).unwrap();
    m.finetuned = true;
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &m).unwrap();
    assert_eq!(&buf[..4], b"PALM");
    let back = read_checkpoint(&mut buf.as_slice()).unwrap();
    assert_eq!(back, m);

    // The vocabulary hash follows the config block.
    let cfg_len = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let hash_at = 12 + cfg_len + 4;
    let mut tampered = buf.clone();
    tampered[hash_at] ^= 1;
    assert!(matches!(read_checkpoint(&mut tampered.as_slice()), Err(EncoderError::Checkpoint(_))));
    assert!(read_checkpoint(&mut &buf[..buf.len() - 1]).is_err());
    let mut magic = buf.clone();
    magic[0] = b'X';
    assert!(read_checkpoint(&mut magic.as_slice()).is_err());
}

fn fixture_windows() -> Vec<TokenWindow> {
    let mut out = Vec::new();
    for name in ["code32_o2.bin", "code32_o0.bin", "code32_os.bin"] {
        let path = format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
        let img = BinaryImage::raw(std::fs::read(path).unwrap());
        let units = linear_sweep(&img, None);
        let stream = Normalizer::default().normalize_units(&units, &img.valid_memory_range());
        out.extend(windowize_tokens(&stream, 64).into_iter().filter(|w| maskable_positions(w).len() >= 5));
    }
    out
}

fn quick_config(seed: u64) -> TrainConfig {
    TrainConfig { lr: 2e-3, epochs: 3, seed, ..TrainConfig::default() }
}

#[test]
fn pretraining_lowers_loss_and_is_deterministic() {
    let windows: Vec<TokenWindow> = fixture_windows().into_iter().take(200).collect();
    assert_eq!(windows.len(), 200);
    let run = || {
        let mut m = Model::<f32>::new(ModelConfig::tiny(2, 32), 5).unwrap();
        let log = train_pretrain(&mut m, &windows, &quick_config(5)).unwrap();
        (m, log)
    };
    let (m1, log1) = run();
    let (m2, log2) = run();
    assert_eq!(log1, log2);
    assert_eq!(m1.params, m2.params);
    assert!(log1.epochs.last().unwrap().mean_loss < log1.epochs[0].mean_loss, "{log1:?}");
    assert!(m1.params.all_finite());
}

#[test]
fn finetuning_learns_a_separable_task() {
    // Code windows against windows of padding bytes.
    let mut train = fixture_windows();
    train.truncate(60);
    for w in &mut train {
        w.label = Some(RegionLabel::Instruction);
    }
    let pad = |n: usize| {
        let mut tokens = vec![Token::SOS];
        let mut spans = Vec::new();
        for i in 0..n {
            tokens.extend([if i % 3 == 0 { Token::PAD_ABNORMAL } else { Token::PAD_NORMAL }, Token::EOS]);
            spans.push((1 + 2 * i as u32, 3 + 2 * i as u32));
        }
        TokenWindow { tokens, spans, byte_start: 0, byte_end: n, label: Some(RegionLabel::NativeData) }
    };
    train.extend((0..60).map(|i| pad(10 + i % 20)));
    let val = train.iter().step_by(5).cloned().collect::<Vec<_>>();
    let cfg = quick_config(2);
    let run = || {
        let mut m = Model::<f32>::new(ModelConfig::tiny(2, 32), 2).unwrap();
        let log = train_finetune(&mut m, &train, &val, &cfg).unwrap();
        (m, log)
    };
    let (m, log) = run();
    assert_eq!(run().1, log);
    assert!(m.finetuned);
    assert!(log.epochs.last().unwrap().val_f1.unwrap() > 0.9, "{log:?}");

    let mut unlabeled = train.clone();
    unlabeled[3].label = None;
    let mut fresh = Model::<f32>::new(ModelConfig::tiny(1, 8), 0).unwrap();
    assert!(matches!(train_finetune(&mut fresh, &unlabeled, &[], &cfg), Err(EncoderError::MissingLabels(3))));
    assert!(matches!(train_finetune(&mut fresh, &[], &[], &cfg), Err(EncoderError::EmptyCorpus)));
    assert!(matches!(train_pretrain(&mut fresh, &[], &cfg), Err(EncoderError::EmptyCorpus)));
}
