mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use tfab_core::keq::*;
use tfab_core::partial_autos::partial_autos_below;

use common::{all_graphs, graph_iso_oracle};

fn structure(e0: &[usize], e1: &[usize]) -> FiniteKeqStructure {
    FiniteKeqStructure::from_indices((0..e0.len()).map(|i| i.to_string()).collect(), e0, e1)
}

#[test]
fn relation_examples() {
    assert!(m_relation(2, 7, 7).unwrap());
    assert!(m_relation(0, code(1, 2, 0), code(1, 5, 9)).unwrap());
    assert!(!m_relation(1, code(1, 2, 0), code(1, 5, 9)).unwrap());
    assert_eq!(m_relation(3, 0, 0), Err(KeqError::RelationIndex(3)));
}

proptest! {
    #[test]
    fn pairing_round_trip(x in 0u64..5000, y in 0u64..5000) {
        prop_assert_eq!(unpair(pair(x, y)), (x, y));
    }

    #[test]
    fn code_round_trip(r in 0u64..60, c in 0u64..60, f in 0u64..60) {
        prop_assert_eq!(triple(code(r, c, f)), (r, c, f));
    }

    #[test]
    fn relations_are_equivalences(a in 0u64..400, b in 0u64..400, c in 0u64..400, i in 0usize..3) {
        let r = |x, y| m_relation(i, x, y).unwrap();
        prop_assert!(r(a, a));
        prop_assert_eq!(r(a, b), r(b, a));
        if r(a, b) && r(b, c) {
            prop_assert!(r(a, c));
        }
    }
}

#[test]
fn encoder_examples() {
    let edge = GraphAdj::new(vec!["u".into(), "v".into()], &[("u".into(), "v".into())]).unwrap();
    let s = encode_graph(&edge);
    assert_eq!(s.labels, vec!["u", "v", "u~v@u", "u~v@v"]);
    assert_eq!(s.blocks(0), vec![vec![0, 2], vec![1, 3]]);
    assert_eq!(s.blocks(1), vec![vec![0], vec![1], vec![2, 3]]);

    let empty = GraphAdj::from_indices(2, &[]);
    let s = encode_graph(&empty);
    assert_eq!(s.blocks(0).len(), 2);
    assert_eq!(s.blocks(1).len(), 2);

    let triangle = GraphAdj::from_indices(3, &[(0, 1), (1, 2), (0, 2)]);
    let s = encode_graph(&triangle);
    assert_eq!(s.len(), 9);
    assert!(s.blocks(0).iter().all(|b| b.len() == 3));
    let mut sizes: Vec<usize> = s.blocks(1).iter().map(Vec::len).collect();
    sizes.sort();
    assert_eq!(sizes, vec![1, 1, 1, 2, 2, 2]);
}

#[test]
fn decoder_examples_and_errors() {
    let singletons = structure(&[0, 1, 2], &[0, 1, 2]);
    let g = decode_keq(&singletons).unwrap();
    assert_eq!(g.vertices.len(), 3);
    assert!(g.edges.is_empty());

    let path = GraphAdj::from_indices(3, &[(0, 1), (1, 2)]);
    assert_eq!(decode_keq(&encode_graph(&path)).unwrap(), path);

    // two points sharing an E0 block and no vertex of their own
    let bad = structure(&[0, 0], &[0, 0]);
    assert!(matches!(decode_keq(&bad), Err(KeqError::Decode(_))));
}

#[test]
fn round_trip_up_to_six_vertices() {
    for n in 0..=6 {
        for g in all_graphs(n) {
            assert_eq!(decode_keq(&encode_graph(&g)).unwrap(), g);
        }
    }
}

#[test]
fn isomorphism_examples() {
    let s = encode_graph(&GraphAdj::from_indices(3, &[(0, 1)]));
    assert_eq!(is_isomorphic_finite(&s, &s), Some(vec![0, 1, 2, 3, 4]));
    let edge = encode_graph(&GraphAdj::from_indices(2, &[(0, 1)]));
    let none = encode_graph(&GraphAdj::from_indices(2, &[]));
    assert_eq!(is_isomorphic_finite(&edge, &none), None);
    let p3 = encode_graph(&GraphAdj::from_indices(3, &[(0, 1), (1, 2)]));
    let star = encode_graph(&GraphAdj::from_indices(3, &[(0, 1), (0, 2)]));
    assert!(is_isomorphic_finite(&p3, &star).is_some());
}

#[test]
fn graph_isomorphism_matches_oracle_up_to_four_vertices() {
    for n in 0..=4 {
        let gs = all_graphs(n);
        for a in &gs {
            for b in &gs {
                let keq = is_isomorphic_finite(&encode_graph(a), &encode_graph(b)).is_some();
                assert_eq!(keq, graph_iso_oracle(a, b), "{a:?} vs {b:?}");
                assert_eq!(a.isomorphism_to(b).is_some(), keq);
            }
        }
    }
}

#[test]
fn greedy_embedding_examples() {
    let one = structure(&[0], &[0]);
    assert_eq!(greedy_embed(&one, 1), vec![0]);

    let e0_pair = structure(&[0, 0], &[0, 1]);
    let f = greedy_embed(&e0_pair, 2);
    let least = (0..)
        .find(|&k: &Point| {
            k != f[0] && triple(k).0 == triple(f[0]).0 && triple(k).1 != triple(f[0]).1
        })
        .unwrap();
    assert_eq!(f[1], least);

    let unrelated = structure(&[0, 1, 2], &[0, 1, 2]);
    let f = greedy_embed(&unrelated, 3);
    for i in 0..3 {
        for j in 0..i {
            assert_ne!(triple(f[i]).0, triple(f[j]).0);
            assert_ne!(triple(f[i]).1, triple(f[j]).1);
        }
    }
}

/// All structures on `n` points, as pairs of restricted-growth strings.
fn all_structures(n: usize) -> Vec<FiniteKeqStructure> {
    fn rgs(n: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new()];
        for _ in 0..n {
            out = out
                .into_iter()
                .flat_map(|v: Vec<usize>| {
                    let m = v.iter().max().map_or(0, |m| m + 1);
                    (0..=m).map(move |b| [v.clone(), vec![b]].concat())
                })
                .collect();
        }
        out
    }
    let parts = rgs(n);
    parts
        .iter()
        .flat_map(|a| parts.iter().map(move |b| structure(a, b)))
        .collect()
}

#[test]
fn greedy_embedding_is_an_embedding_up_to_six_points() {
    for n in 1..=6 {
        for s in all_structures(n) {
            let f = greedy_embed(&s, n);
            let set: std::collections::BTreeSet<_> = f.iter().collect();
            assert_eq!(set.len(), n);
            for i in 0..n {
                for j in 0..n {
                    for r in 0..2 {
                        assert_eq!(s.related(r, i, j), m_relation(r, f[i], f[j]).unwrap());
                    }
                }
            }
        }
    }
}

#[test]
fn greedy_embedding_of_padding_extends_the_core() {
    let core = encode_graph(&GraphAdj::from_indices(3, &[(0, 1), (1, 2)]));
    let base = greedy_embed(&core, core.len());
    for j in 0..=8 {
        let padded = core.pad_isolated(j);
        let f = greedy_embed(&padded, padded.len());
        assert_eq!(&f[..base.len()], base.as_slice());
    }
}

#[test]
fn partial_automorphisms_extend_by_one_point() {
    for map in partial_autos_below(4) {
        if map.len() > 2 {
            continue;
        }
        for a in 0..12u64 {
            if map.contains_key(&a) {
                continue;
            }
            let found = (0..2000u64).any(|b| {
                let mut m: BTreeMap<Point, Point> = map.clone();
                m.insert(a, b);
                is_partial_iso(&m).is_ok()
            });
            assert!(found, "{map:?} does not extend to {a}");
        }
    }
}

#[test]
fn structure_json_round_trip() {
    let s = encode_graph(&GraphAdj::from_indices(3, &[(0, 2)]));
    let text = serde_json::to_string(&s).unwrap();
    let back: FiniteKeqStructure = serde_json::from_str(&text).unwrap();
    assert_eq!(back, s);
    let bad = r#"{"domain":["a","b"],"e0":[["a"]],"e1":[["a"],["b"]]}"#;
    assert!(serde_json::from_str::<FiniteKeqStructure>(bad).is_err());
    let g: GraphAdj = serde_json::from_str(r#"{"vertices":[1,2],"edges":[[1,2]]}"#).unwrap();
    assert_eq!(g.edges.len(), 1);
    assert!(serde_json::from_str::<GraphAdj>(r#"{"vertices":[1],"edges":[[1,1]]}"#).is_err());
}
