use proptest::prelude::*;
use smmse::matrices::{build, coherence, welch_bound, MatrixDocument, MatrixFamily, MatrixSpec};

#[test]
fn etf_is_a_tight_equiangular_frame() {
    let built = build(&MatrixSpec::new(
        MatrixFamily::EquiangularTightFrame,
        3,
        6,
        0,
    ))
    .unwrap();
    let a = built.matrix.matrix();
    assert!(!built.approximate);
    let frame = a * a.transpose();
    assert!((frame - nalgebra::DMatrix::identity(3, 3) * 2.0).amax() <= 1e-8);
    assert!((coherence(a) - welch_bound(3, 6)).abs() <= 1e-12);
    for col in a.column_iter() {
        assert!((col.norm() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn document_roundtrip_preserves_the_matrix() {
    let built = build(&MatrixSpec::new(
        MatrixFamily::SubsampledOrthogonal,
        3,
        6,
        4,
    ))
    .unwrap();
    let json = serde_json::to_string(&MatrixDocument::from_built(&built)).unwrap();
    let doc: MatrixDocument = serde_json::from_str(&json).unwrap();
    assert_eq!(doc.to_matrix().unwrap(), built.matrix);
}

proptest! {
    #[test]
    fn random_families_are_deterministic(seed in any::<u64>(), m in 1usize..=5, extra in 0usize..=4) {
        let n = m + extra;
        for family in [MatrixFamily::SubsampledOrthogonal, MatrixFamily::NormalizedGaussian] {
            let spec = MatrixSpec::new(family, m, n, seed);
            let first = build(&spec).unwrap();
            let second = build(&spec).unwrap();
            prop_assert_eq!(&first.matrix, &second.matrix);
            let a = first.matrix.matrix();
            if family == MatrixFamily::SubsampledOrthogonal {
                let gram = a * a.transpose();
                prop_assert!((gram - nalgebra::DMatrix::identity(m, m)).amax() <= 1e-10);
            } else {
                for row in a.row_iter() {
                    prop_assert!((row.norm() - 1.0).abs() <= 1e-12);
                }
            }
        }
    }
}
