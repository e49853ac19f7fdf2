use genqa_core::seq2seq::{init_model, loss_and_grad, Batch, EncodedExample, ModelConfig, ModelParams};
use genqa_core::textproc::PAD;

fn tiny(n_heads: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: 11,
        d_model: 8,
        n_layers: 1,
        n_heads,
        d_ff: 16,
        max_source_len: 8,
        max_target_len: 8,
        dropout: 0.0,
    }
}

fn example(source: &[u32], target: &[u32]) -> EncodedExample {
    EncodedExample {
        source: source.to_vec(),
        target: target.to_vec(),
    }
}

/// Largest relative error between analytic and central-difference
/// gradients over every coordinate.
fn worst_relative_error(params: &ModelParams, batch: &Batch) -> (f64, String) {
    let (_, grads) = loss_and_grad(params, batch).unwrap();
    let h = 1e-4;
    let mut worst = (0.0, String::new());
    let mut p = params.clone();
    for ti in 0..params.tensors.len() {
        for j in 0..params.tensors[ti].value.data.len() {
            let x = params.tensors[ti].value.data[j];
            p.tensors[ti].value.data[j] = x + h;
            let up = loss_and_grad(&p, batch).unwrap().0;
            p.tensors[ti].value.data[j] = x - h;
            let down = loss_and_grad(&p, batch).unwrap().0;
            p.tensors[ti].value.data[j] = x;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[ti].data[j];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            if rel > worst.0 {
                worst = (rel, format!("{}[{j}]: {analytic} vs {numeric}", params.tensors[ti].name));
            }
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences_with_padding() {
    for (seed, heads) in [(3, 1), (11, 2)] {
        let params = init_model(&tiny(heads), seed).unwrap();
        let exs = [example(&[5, 6, 7, PAD], &[8, 9]), example(&[9, 3], &[5, 6, 10])];
        let batch = Batch::pad(&exs.iter().collect::<Vec<_>>());
        let (rel, at) = worst_relative_error(&params, &batch);
        assert!(rel < 1e-4, "seed {seed}: {rel} at {at}");
    }
}

#[test]
fn padding_does_not_change_loss_or_gradients() {
    let params = init_model(&tiny(2), 4).unwrap();
    let short = example(&[5, 6], &[7]);
    let long = example(&[9, 9, 9, 9, 9], &[8, 8, 8, 8]);
    let alone = Batch::pad(&[&short]);
    let (l1, g1) = loss_and_grad(&params, &alone).unwrap();
    let mut padded = Batch::pad(&[&short, &long]);
    padded.sources.truncate(1);
    padded.decoder_inputs.truncate(1);
    padded.golds.truncate(1);
    let (l2, g2) = loss_and_grad(&params, &padded).unwrap();
    assert!((l1 - l2).abs() < 1e-12, "{l1} vs {l2}");
    for (a, b) in g1.iter().zip(&g2) {
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
