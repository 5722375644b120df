// Write the same snapshots to containers at several codec settings and read
// them back, reporting size and worst pointwise error.

use dmdkit::codec::CodecMode;
use dmdkit::store::{read_container, write_container, ContainerReader};
use dmdkit::synth::{generate, GeneratorKind, GeneratorSpec};

fn main() {
    let spec = GeneratorSpec::defaults(GeneratorKind::from_name("advecting_front").unwrap());
    let snaps = generate(&spec).unwrap().snapshots;
    let dir = tempfile::tempdir().unwrap();

    for mode in ["lossless", "accuracy=1e-6", "accuracy=1e-3"] {
        let mode: CodecMode = mode.parse().unwrap();
        let path = dir.path().join("front.snap");
        let summary = write_container(&path, &snaps, mode).unwrap();
        let back = read_container(&path).unwrap();
        let worst = snaps.data().sub(back.data()).max_abs();
        println!(
            "{:<16} {:>8} bytes  saves {:>5.1}%  max |err| {worst:.2e}",
            mode.to_string(),
            summary.bytes_written,
            100.0 * summary.reduction()
        );
        if let Some(eps) = mode.epsilon() {
            assert!(worst <= eps);
        } else {
            assert_eq!(worst, 0.0);
        }
    }

    // single snapshots can be read without decoding the rest
    let path = dir.path().join("front.snap");
    let mut reader = ContainerReader::open(&path).unwrap();
    let mid = reader.len() / 2;
    let v = reader.read_snapshot(mid).unwrap();
    println!("snapshot {mid}: {} values, field '{}'", v.len(), reader.header().field);
}
