//! Builds the default synthetic cohort and summarizes its population graph.

use fedni::datagen::{generate_population, CohortSpec};
use fedni::graphcons::{feature_similarity, phenotype_similarity, GraphConfig, PopulationGraph};

fn main() -> fedni::Result<()> {
    let g = generate_population(&CohortSpec {
        n: 200,
        ..Default::default()
    })?;
    let n = g.node_count();
    let degrees: Vec<usize> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i && g.adjacency.get(i, j) > 0.0)
                .count()
        })
        .collect();
    let mean = degrees.iter().sum::<usize>() as f64 / n as f64;
    println!(
        "{n} nodes, {} features, {} after PCA",
        g.feature_dim(),
        g.reduced.cols()
    );
    println!(
        "degree min {} mean {mean:.1} max {}",
        degrees.iter().min().unwrap(),
        degrees.iter().max().unwrap()
    );

    // Same-label neighbours should dominate.
    let (mut same, mut total) = (0, 0);
    for i in 0..n {
        for j in 0..i {
            if g.adjacency.get(i, j) > 0.0 {
                total += 1;
                same += usize::from(g.labels[i] == g.labels[j]);
            }
        }
    }
    println!("edge homophily {:.3}", same as f64 / total as f64);

    // The pieces can be run by hand on any subset.
    let s = feature_similarity(&g.reduced, 1.0)?;
    let st = phenotype_similarity(&g.phenotypes, 2.0)?;
    println!("s[0,1] = {:.4}, st[0,1] = {}", s.get(0, 1), st.get(0, 1));

    let first: Vec<usize> = (0..50).collect();
    let sub: PopulationGraph = g.rebuild(
        &first,
        &GraphConfig {
            k: 5,
            ..Default::default()
        },
    )?;
    println!(
        "rebuilt subgraph on 50 nodes with k = 5: {} edges",
        count_edges(&sub)
    );
    Ok(())
}

fn count_edges(g: &PopulationGraph) -> usize {
    let n = g.node_count();
    (0..n)
        .map(|i| (0..i).filter(|&j| g.adjacency.get(i, j) > 0.0).count())
        .sum()
}
