// One-off: writes the committed toy dataset under data/toy/.
use cfag::datagen::{generate, write_edge_lists, SynthSpec};

fn main() {
    let graph = generate(&SynthSpec::tiny(20260809)).unwrap();
    write_edge_lists(&graph, "data/toy").unwrap();
    println!(
        "wrote data/toy: {} users, {} groups, {} items",
        graph.n_users(),
        graph.n_groups(),
        graph.n_items()
    );
}
