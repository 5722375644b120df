// Feed snapshots one at a time into a streaming DMD state. Repeated
// snapshots are rejected by the incremental SVD and do not grow the model.

use dmdkit::dmd::{fit_batch, stream_finalize, stream_init, stream_push, RankChoice, SvdBackend};
use dmdkit::svd::DEFAULT_EPSILON_SVD;
use dmdkit::synth::{generate, GeneratorKind, GeneratorSpec};

fn main() {
    let mut spec = GeneratorSpec::defaults(GeneratorKind::from_name("traveling_wave").unwrap());
    spec.steps = 30;
    let snaps = generate(&spec).unwrap().snapshots;

    let mut state = stream_init(2, DEFAULT_EPSILON_SVD).unwrap();
    for k in 0..snaps.len() {
        state = stream_push(&state, snaps.snapshot(k), snaps.time(k)).unwrap();
    }
    let before = state.accepted_count();
    // the same frame again, slightly later
    let last = snaps.len() - 1;
    state = stream_push(&state, snaps.snapshot(last), snaps.time(last) + 1e-3).unwrap();
    assert_eq!(state.accepted_count(), before);

    let streamed = stream_finalize(&state).unwrap();
    let batch = fit_batch(&snaps, RankChoice::Fixed(2), SvdBackend::Exact).unwrap();

    println!("seen {}, accepted {}", state.seen_count(), state.accepted_count());
    for (s, b) in streamed.cont_eigs.iter().zip(&batch.cont_eigs) {
        println!("  ω stream {s:.9}  batch {b:.9}");
    }
    let freq = streamed.cont_eigs.iter().map(|w| w.im.abs()).fold(0.0, f64::max);
    assert!((freq - 1.0).abs() < 1e-6);
}
