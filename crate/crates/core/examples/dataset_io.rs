//! Writes a cohort to the binary dataset format, reads it back and splits
//! it into silos.

use fedni::datagen::{
    generate_population, load_dataset, partition_clients, save_dataset, CohortSpec, PartitionMode,
};

fn main() -> fedni::Result<()> {
    let spec = CohortSpec {
        n: 150,
        d: 12,
        seed: 4,
        ..Default::default()
    };
    let g = generate_population(&spec)?;
    let path = std::env::temp_dir().join("fedni-example.fni");
    save_dataset(&g, &path)?;
    let back = load_dataset(&path)?;
    println!(
        "{} bytes on disk, round trip equal: {}",
        std::fs::metadata(&path)?.len(),
        back.features == g.features && back.adjacency == g.adjacency && back.labels == g.labels
    );
    std::fs::remove_file(&path)?;

    for mode in [PartitionMode::Rebuild, PartitionMode::Induced] {
        let silos = partition_clients(&g, 4, 9, mode, &Default::default(), 0.0)?;
        let sizes: Vec<usize> = silos.iter().map(|s| s.node_count()).collect();
        println!("{mode:?}: silo sizes {sizes:?}");
    }
    Ok(())
}
