use ndarray::Array2;
use packsense::binimage::BinaryImage;
use packsense::disasm::{linear_sweep, Mnemonic, Register};
use packsense::normalizer::{windowize_tokens, Normalizer, Token, TokenWindow, VOCAB_SIZE};
use packsense::simlm::{
    apply_mask, maskable_positions, mlm_loss, plan_for_epoch, plan_mask, MaskAction, MaskPlan, MaskRates, Selection,
    SimlmError, IGNORE_INDEX,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn window_from_spans(spans: &[&[Token]]) -> TokenWindow {
    let mut tokens = vec![Token::SOS];
    let mut ranges = Vec::new();
    for s in spans {
        let start = tokens.len() as u32;
        tokens.extend_from_slice(s);
        tokens.push(Token::EOS);
        ranges.push((start, tokens.len() as u32));
    }
    TokenWindow { tokens, spans: ranges, byte_start: 0, byte_end: 0, label: None }
}

fn m(x: Mnemonic) -> Token {
    Token::mnemonic(x)
}

fn r32(n: u8) -> Token {
    Token::register(Register::Gpr32(n))
}

fn code_windows(bytes: &[u8]) -> Vec<TokenWindow> {
    let img = BinaryImage::raw(bytes.to_vec());
    let units = linear_sweep(&img, None);
    let stream = Normalizer::default().normalize_units(&units, &img.valid_memory_range());
    windowize_tokens(&stream, 512)
}

fn trainable(windows: Vec<TokenWindow>) -> Vec<TokenWindow> {
    windows.into_iter().filter(|w| maskable_positions(w).len() >= 5).collect()
}

/// Independent restatement of the plan rules.
fn assert_plan_ok(w: &TokenWindow, plan: &MaskPlan) {
    let mut owner = vec![0u8; w.tokens.len()];
    for &(s, e) in &w.spans {
        let mut opcode = false;
        let mut operand = false;
        for p in plan.positions().filter(|p| (s as usize..e as usize).contains(p)) {
            let t = w.tokens[p];
            let is_opcode = t.text().starts_with("[pad_")
                || packsense::disasm::Mnemonic::ALL.iter().any(|&x| m(x) == t)
                || packsense::disasm::Prefix::ALL.iter().any(|&x| Token::prefix(x) == t);
            opcode |= is_opcode;
            operand |= !is_opcode;
            owner[p] = 1;
        }
        assert!(!(opcode && operand), "span ({s},{e}) selected on both sides");
    }
    for sel in &plan.selections {
        assert_ne!(sel.position, 0);
        assert_ne!(w.tokens[sel.position], Token::EOS);
        assert_eq!(sel.original, w.tokens[sel.position]);
        if let MaskAction::Randomize(t) = sel.action {
            assert_ne!(t, sel.original);
            assert_eq!(t.class(), sel.original.class());
        }
    }
}

#[test]
fn hundred_maskable_selects_twenty() {
    // 50 two-operand instructions: 150 maskable; build exactly 100 with
    // 25 `mov eax, ebx, [const]`-shaped spans of four maskable tokens.
    let spans: Vec<Vec<Token>> = (0..25).map(|i| vec![m(Mnemonic::Mov), r32(i % 8), r32(3), Token::CONST]).collect();
    let refs: Vec<&[Token]> = spans.iter().map(|s| s.as_slice()).collect();
    let w = window_from_spans(&refs);
    assert_eq!(maskable_positions(&w).len(), 100);
    let mut counts = [0usize; 3];
    let seeds = 2000;
    for seed in 0..seeds {
        let plan = plan_mask(&w, &mut ChaCha8Rng::seed_from_u64(seed), &MaskRates::default()).unwrap();
        assert_eq!(plan.len(), 20);
        assert_plan_ok(&w, &plan);
        for s in &plan.selections {
            counts[match s.action {
                MaskAction::Mask => 0,
                MaskAction::Randomize(_) => 1,
                MaskAction::Keep => 2,
            }] += 1;
        }
    }
    let per_plan: Vec<f64> = counts.iter().map(|&c| c as f64 / seeds as f64).collect();
    assert!((per_plan[0] - 8.0).abs() < 0.3, "{per_plan:?}");
    assert!((per_plan[1] - 10.0).abs() < 0.3, "{per_plan:?}");
    assert!((per_plan[2] - 2.0).abs() < 0.3, "{per_plan:?}");
}

#[test]
fn opcode_and_operand_never_together() {
    // the span under test plus filler so the window clears the floor
    let filler = [m(Mnemonic::Push), r32(5)];
    let w = window_from_spans(&[&[m(Mnemonic::Mov), r32(0), r32(3)], &filler, &filler, &filler]);
    let mut seen_opcode = false;
    let mut seen_operand = false;
    for seed in 0..10_000 {
        let plan = plan_mask(&w, &mut ChaCha8Rng::seed_from_u64(seed), &MaskRates::default()).unwrap();
        let in_span: Vec<usize> = plan.positions().filter(|p| (1..4).contains(p)).collect();
        let mov = in_span.contains(&1);
        let operand = in_span.iter().any(|&p| p == 2 || p == 3);
        assert!(!(mov && operand), "seed {seed}: {in_span:?}");
        seen_opcode |= mov;
        seen_operand |= operand;
    }
    assert!(seen_opcode && seen_operand);
}

#[test]
fn tiny_window_is_degenerate() {
    let w = window_from_spans(&[&[m(Mnemonic::Push), r32(0)], &[m(Mnemonic::Pop), r32(0)]]);
    let err = plan_mask(&w, &mut ChaCha8Rng::seed_from_u64(0), &MaskRates::default()).unwrap_err();
    assert_eq!(err, SimlmError::DegenerateWindow(4));
}

#[test]
fn invalid_rates_rejected() {
    let w = window_from_spans(&[&[m(Mnemonic::Mov), r32(0), r32(1), r32(2), r32(3)]]);
    let rates = MaskRates { mask: 0.5, ..MaskRates::default() };
    assert_eq!(plan_mask(&w, &mut ChaCha8Rng::seed_from_u64(0), &rates), Err(SimlmError::InvalidRates));
}

#[test]
fn figure_four_example() {
    // mov eax, ebx ; push ecx  ->  eax masked, push replaced by add
    let w = window_from_spans(&[&[m(Mnemonic::Mov), r32(0), r32(3)], &[m(Mnemonic::Push), r32(1)]]);
    let plan = MaskPlan {
        selections: vec![
            Selection { position: 2, action: MaskAction::Mask, original: r32(0) },
            Selection { position: 5, action: MaskAction::Randomize(m(Mnemonic::Add)), original: m(Mnemonic::Push) },
        ],
    };
    let masked = apply_mask(&w, &plan).unwrap();
    let text: Vec<_> = masked.input.iter().map(|t| t.text()).collect();
    assert_eq!(text, ["[SOS]", "mov", "[MASK]", "ebx", "[EOS]", "add", "ecx", "[EOS]"]);
    let ids = masked.target_ids();
    assert_eq!(ids[2], r32(0).id() as i64);
    assert_eq!(ids[5], m(Mnemonic::Push).id() as i64);
    assert_eq!(ids.iter().filter(|&&i| i == IGNORE_INDEX).count(), 6);
}

#[test]
fn empty_plan_and_keep() {
    let w = window_from_spans(&[&[m(Mnemonic::Mov), r32(0), r32(3)]]);
    let masked = apply_mask(&w, &MaskPlan::default()).unwrap();
    assert_eq!(masked.input, w.tokens);
    assert!(masked.targets.iter().all(Option::is_none));

    let keep = MaskPlan { selections: vec![Selection { position: 3, action: MaskAction::Keep, original: r32(3) }] };
    let masked = apply_mask(&w, &keep).unwrap();
    assert_eq!(masked.input, w.tokens);
    assert_eq!(masked.targets[3], Some(r32(3)));

    let bad = MaskPlan { selections: vec![Selection { position: 9, action: MaskAction::Keep, original: r32(3) }] };
    assert_eq!(apply_mask(&w, &bad), Err(SimlmError::PlanMismatch { position: 9, len: 5 }));
}

/// Straight-line softmax + NLL, one target at a time.
fn scalar_loss(logits: &[Vec<f64>], targets: &[Option<usize>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0.0;
    for (row, t) in logits.iter().zip(targets) {
        let Some(t) = t else { continue };
        let mut z = 0.0;
        for v in row {
            z += v.exp();
        }
        sum += -(row[*t].exp() / z).ln();
        n += 1.0;
    }
    sum / n
}

#[test]
fn loss_values() {
    let w = window_from_spans(&[&[m(Mnemonic::Mov), r32(0), r32(3)], &[m(Mnemonic::Push), r32(1)]]);
    let plan = MaskPlan {
        selections: vec![
            Selection { position: 2, action: MaskAction::Mask, original: r32(0) },
            Selection { position: 6, action: MaskAction::Keep, original: r32(1) },
        ],
    };
    let masked = apply_mask(&w, &plan).unwrap();
    let len = w.tokens.len();

    let mut perfect = Array2::from_elem((len, VOCAB_SIZE), f64::NEG_INFINITY);
    for (p, t) in masked.selected() {
        perfect[[p, t.id()]] = 0.0;
    }
    assert_eq!(mlm_loss(perfect.view(), &masked).unwrap(), 0.0);

    let uniform = Array2::<f64>::zeros((len, VOCAB_SIZE));
    let loss = mlm_loss(uniform.view(), &masked).unwrap();
    assert!((loss - (VOCAB_SIZE as f64).ln()).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let logits = Array2::from_shape_fn((len, VOCAB_SIZE), |_| rng.gen_range(-4.0..4.0));
        let rows: Vec<Vec<f64>> = logits.rows().into_iter().map(|r| r.to_vec()).collect();
        let targets: Vec<Option<usize>> = masked.targets.iter().map(|t| t.map(|t| t.id())).collect();
        let ours = mlm_loss(logits.view(), &masked).unwrap();
        assert!((ours - scalar_loss(&rows, &targets)).abs() < 1e-10);
    }

    let none = apply_mask(&w, &MaskPlan::default()).unwrap();
    assert_eq!(mlm_loss(uniform.view(), &none), Err(SimlmError::NoTargets));
    let short = Array2::<f64>::zeros((2, VOCAB_SIZE));
    assert!(matches!(mlm_loss(short.view(), &masked), Err(SimlmError::ShapeMismatch { .. })));
}

#[test]
fn dynamic_masking_changes_plans() {
    let windows = trainable(code_windows(include_bytes!("../fixtures/code32_o2.bin")));
    let rates = MaskRates::default();
    let mut differ = 0;
    let mut total = 0;
    for (i, w) in windows.iter().enumerate() {
        for seed in 0..50u64 {
            let a = plan_for_epoch(w, seed, i as u64, 0, &rates).unwrap();
            let b = plan_for_epoch(w, seed, i as u64, 1, &rates).unwrap();
            assert_eq!(a, plan_for_epoch(w, seed, i as u64, 0, &rates).unwrap());
            total += 1;
            differ += usize::from(a != b);
        }
    }
    assert!(differ as f64 / total as f64 >= 0.99, "{differ}/{total}");
}

#[test]
fn plans_over_real_and_random_windows() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut random = vec![0u8; 20_000];
    rng.fill(&mut random[..]);
    let mut windows = code_windows(include_bytes!("../fixtures/code32_o0.bin"));
    windows.extend(code_windows(&random));
    let windows = trainable(windows);
    let rates = MaskRates::default();
    for (i, w) in windows.iter().enumerate() {
        for epoch in 0..20 {
            let plan = plan_for_epoch(w, 1, i as u64, epoch, &rates).unwrap();
            assert_plan_ok(w, &plan);
            let masked = apply_mask(w, &plan).unwrap();
            for (p, (a, b)) in masked.input.iter().zip(&w.tokens).enumerate() {
                if masked.targets[p].is_none() {
                    assert_eq!(a, b);
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn random_windows_respect_rules(bytes in prop::collection::vec(any::<u8>(), 32..2048), seed in any::<u64>()) {
        for w in code_windows(&bytes) {
            match plan_mask(&w, &mut ChaCha8Rng::seed_from_u64(seed), &MaskRates::default()) {
                Ok(plan) => {
                    assert_plan_ok(&w, &plan);
                    prop_assert!(!plan.is_empty());
                }
                Err(SimlmError::DegenerateWindow(n)) => prop_assert!(n < 5),
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }
}
