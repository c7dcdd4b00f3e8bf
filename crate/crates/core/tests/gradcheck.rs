use motionsrvf::gradcheck::{check_all, GradcheckConfig};

#[test]
fn every_primitive_and_loss_matches_finite_differences() {
    let results = check_all(&GradcheckConfig::default()).unwrap();
    for r in &results {
        println!("{:<28} {:.3e}", r.name, r.max_relative_error);
    }
    assert!(results.len() > 35);
    let bad: Vec<_> = results.iter().filter(|r| !(r.max_relative_error <= 1e-3)).collect();
    assert!(bad.is_empty(), "{bad:?}");
}
