// Render a rising blob to PNG frames, consume them with the directory watcher
// while they are still being written, and score the streaming DMD
// reconstruction with SSIM.

use std::thread;

use dmdkit::dmd::{reconstruct, StreamDmdState};
use dmdkit::imageio::{watch_stream, WatchOptions};
use dmdkit::metrics::{ssim, SsimParams};
use dmdkit::synth::{generate, render_frames, GeneratorKind, GeneratorSpec};

fn main() {
    let mut spec = GeneratorSpec::defaults(GeneratorKind::from_name("rising_blob").unwrap());
    spec.nx = 24;
    spec.ny = 48;
    spec.steps = 120;
    let frame = spec.frame_spec().unwrap();
    let truth = generate(&spec).unwrap().snapshots;
    let dir = tempfile::tempdir().unwrap();

    let producer = {
        let (spec, path) = (spec.clone(), dir.path().to_path_buf());
        thread::spawn(move || render_frames(&spec, &path).unwrap())
    };

    let mut state = StreamDmdState::new(30).unwrap();
    for item in watch_stream(dir.path(), frame, WatchOptions::new(spec.dt)) {
        let (v, t) = item.unwrap();
        state.push(&v, t).unwrap();
    }
    let written = producer.join().unwrap();
    let model = state.finalize().unwrap();

    let params = SsimParams::default();
    let scores: Vec<f64> = (0..truth.len())
        .map(|k| {
            let recon = reconstruct(&model, truth.time(k));
            ssim(truth.snapshot(k), &recon, frame.width, frame.height, &params).unwrap()
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    println!("{written} frames, {} accepted, rank {}", state.accepted_count(), model.rank);
    println!("mean SSIM {mean:.4}");
    assert!(mean > 0.9);
}
