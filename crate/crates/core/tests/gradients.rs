//! Analytic gradients against central finite differences.

mod common;

use memrex::autodiff::Graph;
use memrex::corpus::{Document, EntityCluster, RelationTriple, Span, TypeVocabulary};
use memrex::encoder::{EncoderConfig, TokenEncoder, TokenVocab, ToyEncoder};
use memrex::memory::{tape, InputKind, MemoryConfig, MemoryKind, MemoryModule, MemoryStage};
use memrex::params::ParamStore;
use memrex::pipeline::{HeadConfig, Model, RelationHead};
use memrex::training::compute_losses;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

use common::{finite_difference_check, random_matrix};

fn micro_doc() -> Document {
    let tokens: Vec<String> = "ann met bob . bob likes acme".split(' ').map(String::from).collect();
    Document::new(
        "micro",
        tokens,
        vec![Span::new(0, 4), Span::new(4, 7)],
        vec![
            EntityCluster::new(vec![Span::new(0, 1)], 0),
            EntityCluster::new(vec![Span::new(2, 3), Span::new(4, 5)], 0),
            EntityCluster::new(vec![Span::new(6, 7)], 1),
        ],
        vec![
            RelationTriple {
                head: 1,
                tail: 2,
                relation_type: 0,
            },
            RelationTriple {
                head: 0,
                tail: 1,
                relation_type: 1,
            },
        ],
    )
    .unwrap()
}

fn micro_types() -> TypeVocabulary {
    TypeVocabulary::new(
        vec!["PER".into(), "ORG".into()],
        vec!["knows".into(), "works_for".into()],
    )
    .unwrap()
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let doc = micro_doc();
    let config = EncoderConfig {
        h: 5,
        context_layers: 2,
        ..EncoderConfig::default()
    };
    let encoder = ToyEncoder::new(TokenVocab::build([&doc], 100), &config);
    let mut store = ParamStore::new();
    encoder.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(1));
    let names: Vec<String> = store.names().map(String::from).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let check = finite_difference_check(
        &store,
        &names,
        &|g: &mut Graph| {
            let x = encoder.encode(g, &doc).unwrap();
            g.sum_all(x)
        },
        1e-4,
        1e-3,
        1e-8,
    );
    assert!(check.passed(), "{}", check.worst_param);
    assert!(check.checked > 50);
}

#[test]
fn memory_read_and_similarity_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    store.insert("x", random_matrix(&mut rng, 4, 3, 1.0));
    store.insert("me", random_matrix(&mut rng, 3, 2, 1.0));
    store.insert("mr", random_matrix(&mut rng, 2, 4, 1.0));
    store.insert("wre", random_matrix(&mut rng, 2, 3, 1.0));
    store.insert("wrr", random_matrix(&mut rng, 4, 3, 1.0));
    store.insert("wwe", random_matrix(&mut rng, 3, 2, 1.0));
    store.insert("wwr", random_matrix(&mut rng, 3, 4, 1.0));
    let loss = |g: &mut Graph| {
        let x = g.param("x");
        let (me, mr) = (g.param("me"), g.param("mr"));
        let (wre, wrr) = (g.param("wre"), g.param("wrr"));
        let ae = tape::read_weights(g, x, me, wre).unwrap();
        let ar = tape::read_weights(g, x, mr, wrr).unwrap();
        let xe = tape::extend_representation(g, x, ae);
        let xr = tape::extend_representation(g, x, ar);
        let fused = tape::fuse(g, x, xe, xr);
        let wwe = g.param("wwe");
        let scores = tape::bilinear_similarity(g, fused, me, wwe).unwrap();
        let ce = g.softmax_cross_entropy(scores, vec![0, 2, 1, 1]);
        let wwr = g.param("wwr");
        let rel = tape::bilinear_similarity(g, fused, mr, wwr).unwrap();
        let bce = g.bce_with_logits(rel, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        g.add(ce, bce)
    };
    let check = finite_difference_check(
        &store,
        &["x", "me", "mr", "wre", "wrr", "wwe", "wwr"],
        &loss,
        1e-4,
        1e-3,
        1e-9,
    );
    assert!(check.passed(), "{}", check.worst_param);
}

fn memory_fixture(read_gradient: bool) -> (MemoryModule, ParamStore) {
    let types = micro_types();
    let config = MemoryConfig {
        s_e: 3,
        s_r: 2,
        read_gradient,
        ..MemoryConfig::default()
    };
    let module = MemoryModule::new(config, &types, 4);
    let mut store = ParamStore::new();
    module.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(4));
    store.insert("x", random_matrix(&mut ChaCha8Rng::seed_from_u64(5), 5, 4, 1.0));
    (module, store)
}

fn fused_sum(module: &MemoryModule) -> impl Fn(&mut Graph) -> memrex::autodiff::Var + '_ {
    move |g: &mut Graph| {
        let x = g.param("x");
        let fused = module.enhance(g, x, InputKind::Token, MemoryStage::Full).unwrap();
        g.sum_all(fused)
    }
}

#[test]
fn blocked_read_gradient_leaves_memories_untouched() {
    let (module, store) = memory_fixture(false);
    let loss = fused_sum(&module);
    let mut g = Graph::new(&store);
    let out = loss(&mut g);
    let grads = g.param_gradients(&g.backward(out));
    for kind in [MemoryKind::Entity, MemoryKind::Relation] {
        assert!(grads[kind.param()].as_slice().iter().all(|&v| v == 0.0));
    }
    assert!(grads["memory.read.token_entity"].squared_norm() > 0.0);
}

#[test]
fn open_read_gradient_matches_finite_differences() {
    let (mut module, store) = memory_fixture(false);
    module.set_read_gradient(true);
    let loss = fused_sum(&module);
    let mut g = Graph::new(&store);
    let out = loss(&mut g);
    let grads = g.param_gradients(&g.backward(out));
    assert!(grads[MemoryKind::Entity.param()].squared_norm() > 0.0);
    let check = finite_difference_check(
        &store,
        &["memory.entity", "memory.relation", "memory.read.token_entity", "x"],
        &loss,
        1e-4,
        1e-3,
        1e-9,
    );
    assert!(check.passed(), "{}", check.worst_param);
}

#[test]
fn classifier_loss_writes_memory_with_blocked_reads() {
    let (_module, mut store) = memory_fixture(false);
    store.insert("xe", random_matrix(&mut ChaCha8Rng::seed_from_u64(6), 1, 4, 1.0));
    store.insert("we", random_matrix(&mut ChaCha8Rng::seed_from_u64(7), 4, 3, 1.0));
    let loss = |g: &mut Graph| {
        let (x, m, w) = (g.param("xe"), g.param("memory.entity"), g.param("we"));
        let scores = tape::bilinear_similarity(g, x, m, w).unwrap();
        g.softmax_cross_entropy(scores, vec![1])
    };
    let check = finite_difference_check(&store, &["memory.entity"], &loss, 1e-4, 1e-3, 1e-10);
    assert!(check.passed(), "{}", check.worst_param);
    let mut g = Graph::new(&store);
    let out = loss(&mut g);
    let grads = g.param_gradients(&g.backward(out));
    assert!(grads["memory.entity"].row(1).iter().any(|&v| v != 0.0));
}

fn end_to_end(relation_head: RelationHead) {
    let doc = micro_doc();
    let enc = EncoderConfig {
        h: 4,
        l_max: 2,
        context_layers: 1,
        ..EncoderConfig::default()
    };
    let memory = MemoryConfig {
        s_e: 3,
        s_r: 2,
        read_gradient: true,
        ..MemoryConfig::default()
    };
    let heads = HeadConfig {
        h_e: 3,
        h_p: 3,
        coref_hidden: 3,
        relation_head,
        ..HeadConfig::default()
    };
    let model = Model::new(
        micro_types(),
        Arc::new(ToyEncoder::new(TokenVocab::build([&doc], 100), &enc)),
        enc,
        memory,
        heads,
    )
    .unwrap();
    let params = model.init_params(3);
    let loss = |g: &mut Graph| {
        let mut sampler = ChaCha8Rng::seed_from_u64(0);
        compute_losses(
            &model,
            g,
            &[&doc],
            MemoryStage::Full,
            [1.0, 0.7, 1.3, 0.9],
            &mut sampler,
        )
        .unwrap()
        .1
    };
    let names: Vec<String> = params.names().map(String::from).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let check = finite_difference_check(&params, &names, &loss, 1e-5, 1e-2, 1e-7);
    assert!(check.passed(), "{}", check.worst_param);

    let mut g = Graph::new(&params);
    let out = loss(&mut g);
    let grads = g.param_gradients(&g.backward(out));
    assert!(grads.values().all(|m| m.is_finite()));
}

#[test]
fn end_to_end_gradients_mrc() {
    end_to_end(RelationHead::Mrc);
}

#[test]
fn end_to_end_gradients_grc() {
    end_to_end(RelationHead::Grc);
}
