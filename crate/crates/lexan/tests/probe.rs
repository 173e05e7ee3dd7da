// Temporary throughput probe; removed before finalization.
use std::time::Instant;

use lexan::crf::{viterbi_decode, DecodeConstraints};
use lexan::network::Forwarder;
use lexan::tagset::LabelSpace;
use lexan::training::{init_params, NetworkShape};

#[test]
#[ignore]
fn probe_throughput() {
    let space = LabelSpace::default_scheme();
    let shape = NetworkShape {
        vocab_size: 5000,
        embedding_dim: 128,
        num_layers: 2,
        hidden_size: 256,
        num_labels: space.len(),
    };
    let (network, crf) = init_params(1, &shape);
    let network32 = network.cast::<f32>();
    let crf32 = crf.cast::<f32>();
    let forwarder = Forwarder::new(&network32).unwrap();
    let constraints = DecodeConstraints::from_label_space(&space);

    let line_len = 30usize;
    let n_lines = 400usize;
    let ids: Vec<Vec<usize>> = (0..n_lines)
        .map(|i| (0..line_len).map(|t| 2 + (i * 31 + t * 7) % 4998).collect())
        .collect();

    // Warm up.
    for line in ids.iter().take(20) {
        let e = forwarder.forward(line).unwrap();
        let _ = viterbi_decode(&e, &crf32, Some(&constraints));
    }
    let start = Instant::now();
    let mut chars = 0usize;
    for line in &ids {
        let e = forwarder.forward(line).unwrap();
        let _ = viterbi_decode(&e, &crf32, Some(&constraints));
        chars += line.len();
    }
    let dt = start.elapsed().as_secs_f64();
    eprintln!("chars={} secs={:.3} chars_per_sec={:.0}", chars, dt, chars as f64 / dt);
}
