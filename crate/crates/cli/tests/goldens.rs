//! Regenerate the alignment-tax goldens with
//! `OGPSA_RECORD_GOLDENS=1 cargo test -p ogpsa-cli --release --test goldens -- --ignored`.

use ogpsa::Execution;
use ogpsa_cli::verify::{goldens_csv, parse_goldens, GOLDENS};

#[test]
fn embedded_goldens_cover_every_method_and_seed() {
    let g = parse_goldens(GOLDENS);
    // 2 families × 3 seeds × 3 methods × (2 probes + safety gain)
    assert_eq!(g.len(), 54);
    assert!(g.iter().all(|x| x.value.is_finite()));
}

#[test]
#[ignore = "rewrites goldens/alignment_tax.csv"]
fn record_goldens() {
    if std::env::var_os("OGPSA_RECORD_GOLDENS").is_none() {
        return;
    }
    let body = goldens_csv(Execution::default()).unwrap();
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/goldens/alignment_tax.csv");
    std::fs::write(path, body).unwrap();
}
