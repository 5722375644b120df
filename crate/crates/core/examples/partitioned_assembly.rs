// Reassemble one global snapshot from overlapping partitions, as produced by a
// domain-decomposed solver with ghost cells.

use dmdkit::store::{assemble_partitions, Partition, PartitionedSnapshot};
use dmdkit::Error;

fn main() {
    let global: Vec<f64> = (0..12).map(|i| (i as f64 * 0.5).cos()).collect();
    // three ranks, each owning four cells plus one ghost on either side
    let parts = (0..3)
        .map(|r| {
            let ids: Vec<usize> = (4 * r as i64 - 1..4 * r as i64 + 5)
                .filter(|&i| (0..12).contains(&i))
                .map(|i| i as usize)
                .collect();
            let values = ids.iter().map(|&i| global[i]).collect();
            Partition { global_ids: ids, values }
        })
        .collect::<Vec<_>>();

    let snapshot = PartitionedSnapshot { parts: parts.clone(), global_size: 12 };
    let assembled = assemble_partitions(&snapshot).unwrap();
    assert_eq!(assembled, global);
    println!("assembled {} cells from {} partitions", assembled.len(), parts.len());

    // a ghost cell that disagrees with its owner is rejected
    let mut bad = parts.clone();
    bad[1].values[0] += 1e-6;
    let err = assemble_partitions(&PartitionedSnapshot { parts: bad, global_size: 12 }).unwrap_err();
    println!("disagreeing ghost: {err}");

    // so is a hole in the coverage
    let err = assemble_partitions(&PartitionedSnapshot { parts: parts[..2].to_vec(), global_size: 12 }).unwrap_err();
    assert!(matches!(err, Error::IncompleteCoverage(_)));
    println!("missing partition: {err}");
}
