mod common;

use memrex::corpus::{document_to_docred, parse_docred, Document, EntityCluster, RelationTriple, Span, TypeVocabulary};
use memrex::encoder::enumerate_spans;
use memrex::evaluation::{evaluate, strict_match, EvalConfig};
use memrex::memory::{entity_type_distribution, extend_representation, read_weights, relation_type_probabilities};
use memrex::pipeline::{resolve_coreference, CorefGraph, DocumentPrediction};
use memrex::tensor::Matrix;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, bound: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-bound..bound, rows * cols).prop_map(move |d| Matrix::from_vec(rows, cols, d))
}

/// (X, M, W) with compatible shapes.
fn read_inputs() -> impl Strategy<Value = (Matrix, Matrix, Matrix)> {
    (1usize..7, 1usize..5, 1usize..5, 1usize..5)
        .prop_flat_map(|(n, m, s, h)| (matrix(n, h, 2.0), matrix(m, s, 2.0), matrix(s, h, 2.0)))
}

fn permute_rows(x: &Matrix, perm: &[usize]) -> Matrix {
    let rows: Vec<Vec<f64>> = perm.iter().map(|&p| x.row(p).to_vec()).collect();
    Matrix::from_rows(&rows)
}

/// Sentence lengths, then clusters of in-sentence spans and relations.
fn documents() -> impl Strategy<Value = Document> {
    prop::collection::vec(1usize..6, 1..4).prop_flat_map(|lens| {
        let mut sentences = Vec::new();
        let mut off = 0;
        for l in &lens {
            sentences.push(Span::new(off, off + l));
            off += l;
        }
        let n = off;
        let sents = sentences.clone();
        let mention = (0..sents.len(), 0usize..6, 1usize..4).prop_map(move |(si, a, w)| {
            let s = sents[si];
            let start = s.start + a % s.len();
            let end = (start + w).min(s.end);
            Span::new(start, end)
        });
        let cluster = (prop::collection::vec(mention, 1..3), 0usize..2).prop_map(|(m, t)| EntityCluster::new(m, t));
        (
            prop::collection::vec(cluster, 0..4),
            prop::collection::vec((0usize..4, 0usize..4, 0usize..2), 0..5),
        )
            .prop_map(move |(clusters, rels)| {
                let k = clusters.len();
                let relations = rels
                    .into_iter()
                    .filter(|&(h, t, _)| h < k && t < k && h != t)
                    .map(|(head, tail, relation_type)| RelationTriple {
                        head,
                        tail,
                        relation_type,
                    })
                    .collect();
                let tokens = (0..n).map(|i| format!("t{}", i % 4)).collect();
                Document::new("p", tokens, sentences.clone(), clusters, relations).unwrap()
            })
    })
}

fn vocab() -> TypeVocabulary {
    TypeVocabulary::new(vec!["A".into(), "B".into()], vec!["R0".into(), "R1".into()]).unwrap()
}

proptest! {
    #[test]
    fn attention_sums_to_slot_count((x, m, w) in read_inputs()) {
        let a = read_weights(&x, &m, &w).unwrap();
        let slots = m.rows() as f64;
        prop_assert!((a.iter().sum::<f64>() - slots).abs() < 1e-5);
        prop_assert!(a.iter().all(|&v| v > 0.0 && v < slots || (x.rows() == 1 && v == slots)));
    }

    #[test]
    fn extension_is_scale_covariant(x in matrix(3, 4, 3.0), a in prop::collection::vec(0.0f64..3.0, 3), c in -4.0f64..4.0) {
        let lhs = extend_representation(&x.scale(c), &a).unwrap();
        let rhs = extend_representation(&x, &a).unwrap().scale(c);
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn reads_are_permutation_equivariant((x, m, w) in read_inputs(), seed in any::<u64>()) {
        let n = x.rows();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut state = seed;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (state >> 33) as usize % (i + 1));
        }
        let a = read_weights(&x, &m, &w).unwrap();
        let px = permute_rows(&x, &perm);
        let pa = read_weights(&px, &m, &w).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            prop_assert!((pa[i] - a[p]).abs() < 1e-12);
        }
        let ext = extend_representation(&x, &a).unwrap();
        let pext = extend_representation(&px, &pa).unwrap();
        prop_assert!(pext.max_abs_diff(&permute_rows(&ext, &perm)) < 1e-12);
    }

    #[test]
    fn classifier_outputs_are_distributions(x in prop::collection::vec(-3.0f64..3.0, 3), m in matrix(4, 2, 2.0), w in matrix(3, 2, 2.0)) {
        let p = entity_type_distribution(&x, &m, &w).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let r = relation_type_probabilities(&x, &m, &w).unwrap();
        prop_assert!(r.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn docred_roundtrip(doc in documents()) {
        let v = vocab();
        let text = serde_json::to_string(&vec![document_to_docred(&doc, &v)]).unwrap();
        let (back, _) = parse_docred(&text, Some(&v)).unwrap();
        prop_assert_eq!(&back[0], &doc);
    }

    #[test]
    fn global_positions_are_prefix_sums(doc in documents()) {
        let v = vocab();
        let raw = document_to_docred(&doc, &v);
        let lens: Vec<usize> = raw["sents"].as_array().unwrap().iter().map(|s| s.as_array().unwrap().len()).collect();
        for (ci, vertex) in raw["vertexSet"].as_array().unwrap().iter().enumerate() {
            for (mi, m) in vertex.as_array().unwrap().iter().enumerate() {
                let sid = m["sent_id"].as_u64().unwrap() as usize;
                let pos = m["pos"][0].as_u64().unwrap() as usize;
                let global = lens[..sid].iter().sum::<usize>() + pos;
                prop_assert_eq!(doc.clusters()[ci].mentions[mi].start, global);
            }
        }
    }

    #[test]
    fn spans_sorted_and_unique(lens in prop::collection::vec(1usize..8, 1..4), l_max in 1usize..5) {
        let mut sentences = Vec::new();
        let mut off = 0;
        for l in lens {
            sentences.push(Span::new(off, off + l));
            off += l;
        }
        let spans = enumerate_spans(&sentences, l_max);
        prop_assert!(spans.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(spans.iter().all(|s| s.len() <= l_max && sentences.iter().any(|t| t.contains_span(s))));
    }

    #[test]
    fn coreference_ignores_node_order(edges in prop::collection::vec((0usize..6, 0usize..6, 0.0f64..1.0), 0..15), rot in 0usize..6) {
        let nodes: Vec<Span> = (0..6).map(|i| Span::new(2 * i, 2 * i + 1)).collect();
        let mut g = CorefGraph::new(nodes.clone());
        for &(i, j, s) in &edges {
            g.set_edge(i, j, s);
        }
        let order: Vec<usize> = (0..6).map(|i| (i + rot) % 6).collect();
        let mut h = CorefGraph::new(order.iter().map(|&i| nodes[i]).collect());
        let pos = |x: usize| order.iter().position(|&o| o == x).unwrap();
        for &(i, j, s) in &edges {
            h.set_edge(pos(i), pos(j), s);
        }
        prop_assert_eq!(resolve_coreference(&g, 0.5), resolve_coreference(&h, 0.5));
    }

    #[test]
    fn strict_scoring_invariances(gold in documents(), pred in documents(), flip in any::<bool>()) {
        let p = DocumentPrediction {
            doc_id: "p".into(),
            mentions: vec![],
            clusters: if flip { gold.clusters().to_vec() } else { pred.clusters().to_vec() },
            relations: if flip { gold.relations().to_vec() } else { pred.relations().to_vec() },
        };
        let base = strict_match(&p, &gold, true).unwrap();

        let mut reordered = p.clone();
        reordered.relations.reverse();
        for c in &mut reordered.clusters {
            c.mentions.reverse();
        }
        prop_assert_eq!(strict_match(&reordered, &gold, true).unwrap(), base);

        let report = evaluate(&[p], std::slice::from_ref(&gold), &EvalConfig::default()).unwrap();
        prop_assert!(report.strict.f1 <= report.relation_relaxed.f1 + 1e-12);
    }

    #[test]
    fn vocabulary_indices_are_dense(labels in prop::collection::btree_set("[a-z]{1,4}", 1..10)) {
        let v = TypeVocabulary::from_labels(labels.iter().map(String::as_str), ["r"]).unwrap();
        for (i, l) in v.entity_types().iter().enumerate() {
            prop_assert_eq!(v.entity_id(l), Some(i));
        }
        prop_assert_eq!(v.num_entity_types(), labels.len());
    }
}
