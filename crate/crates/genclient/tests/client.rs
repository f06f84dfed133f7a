use std::sync::Mutex;

use image::{Rgb, RgbImage};
use unirag_core::corpus::{Modality, QueryRecord};
use unirag_core::pairing::{ExamplePair, Provenance};
use unirag_core::prompting::{encode_png, Dialect, GenTask, MemoryLoader, PromptRenderer};
use unirag_genclient::mock::{FailRule, MockConfig, MockServer};
use unirag_genclient::{
    estimate_cost, run_batch, FailurePolicy, GenClient, GenError, GeneratorProfile, OutputKind,
    PromptJob, ResponseCache, RetryPolicy,
};

const FAST_RETRY: RetryPolicy = RetryPolicy {
    max_attempts: 6,
    base_delay_ms: 1,
    max_delay_ms: 4,
};

fn loader() -> MemoryLoader {
    let mut l = MemoryLoader::default();
    for i in 0..200u32 {
        let img = RgbImage::from_pixel(4, 4, Rgb([i as u8, 7, 9]));
        l.insert(format!("img{i}.png"), encode_png(&img).unwrap());
    }
    l
}

fn examples(qi: usize, k: usize) -> Vec<ExamplePair> {
    (0..k)
        .map(|j| {
            let n = (qi * 7 + j) % 200;
            ExamplePair {
                image_did: format!("i{n}"),
                caption_did: format!("c{n}"),
                image_ref: format!("img{n}.png"),
                caption: format!("a small red bus number {n} parked near the water"),
                provenance: Provenance::Rag,
                hop_score: 0.0,
            }
        })
        .collect()
}

fn caption_job(qi: usize, k: usize) -> PromptJob {
    let qid = format!("q{qi}");
    PromptJob {
        query: QueryRecord::new(&qid, Modality::Image, format!("img{}.png", qi % 200)),
        qid,
        examples: examples(qi, k),
        task: GenTask::Caption,
    }
}

fn image_job(qi: usize, k: usize) -> PromptJob {
    let qid = format!("t{qi}");
    PromptJob {
        query: QueryRecord::new(&qid, Modality::Text, format!("two dogs playing {qi}")),
        qid,
        examples: examples(qi, k),
        task: GenTask::ImageGen,
    }
}

fn profile(server: &MockServer, dialect: Dialect) -> GeneratorProfile {
    let mut p = GeneratorProfile::new("mock", dialect, server.url());
    p.retry = FAST_RETRY;
    p
}

#[test]
fn echo_returns_first_example_caption_in_every_dialect() {
    let server = MockServer::start(MockConfig::default()).unwrap();
    let l = loader();
    let r = PromptRenderer::new(&l);
    for dialect in [Dialect::MergedImage, Dialect::Interleaved, Dialect::InterleavedWithSystem] {
        let client = GenClient::new(profile(&server, dialect)).unwrap();
        for k in [1, 5] {
            let job = caption_job(3, k);
            let out = client.generate(&r, &job).unwrap();
            assert_eq!(out.kind, OutputKind::Text);
            assert_eq!(out.text.as_deref(), Some(job.examples[0].caption.as_str()));
            assert_eq!(out.pairs_used, k);
        }
        let out = client.generate(&r, &caption_job(3, 0)).unwrap();
        assert_eq!(out.text.as_deref(), Some("a photo"));
    }
    assert!(server.stats().max_tokens_seen <= 400);
}

#[test]
fn repeated_call_is_served_from_cache() {
    let server = MockServer::start(MockConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let l = loader();
    let r = PromptRenderer::new(&l);
    let client = GenClient::new(profile(&server, Dialect::Interleaved))
        .unwrap()
        .with_cache(ResponseCache::open(dir.path()).unwrap());
    let job = caption_job(1, 2);
    let first = client.generate(&r, &job).unwrap();
    let second = client.generate(&r, &job).unwrap();
    assert!(!first.cached && second.cached);
    assert_eq!(first.text, second.text);
    assert_eq!(server.stats().requests, 1);

    // A fresh client over the same cache directory also hits.
    let again = GenClient::new(profile(&server, Dialect::Interleaved))
        .unwrap()
        .with_cache(ResponseCache::open(dir.path()).unwrap());
    assert!(again.generate(&r, &job).unwrap().cached);
    assert_eq!(server.stats().requests, 1);

    // Changing one caption byte changes the key.
    let mut changed = job.clone();
    changed.examples[1].caption.push('!');
    assert!(!client.generate(&r, &changed).unwrap().cached);
    assert_eq!(server.stats().requests, 2);
}

#[test]
fn oversized_prompt_falls_back_to_four_pairs() {
    let server = MockServer::start(MockConfig {
        max_images: Some(4),
        ..MockConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let l = loader();
    let r = PromptRenderer::new(&l);
    let mut p = profile(&server, Dialect::Interleaved);
    p.max_pairs = Some(4);
    let client = GenClient::new(p)
        .unwrap()
        .with_cache(ResponseCache::open(dir.path().join("cache")).unwrap())
        .with_image_dir(dir.path().join("images"));
    let job = image_job(0, 5);
    let out = client.generate(&r, &job).unwrap();
    assert_eq!(out.kind, OutputKind::Image);
    assert_eq!(out.pairs_used, 4);
    assert_eq!(server.stats().max_images_seen, 5);
    assert_eq!(server.stats().requests, 2);
    let written = std::fs::read(dir.path().join("images").join(out.image_ref.unwrap())).unwrap();
    assert_eq!(written, l.images[&job.examples[0].image_ref]);

    // The rerun is a cache hit under the original key.
    let out = client.generate(&r, &job).unwrap();
    assert!(out.cached);
    assert_eq!(out.pairs_used, 4);
    assert_eq!(server.stats().requests, 2);
}

#[test]
fn oversized_prompt_without_max_pairs_is_an_error() {
    let server = MockServer::start(MockConfig {
        max_images: Some(4),
        ..MockConfig::default()
    })
    .unwrap();
    let l = loader();
    let r = PromptRenderer::new(&l);
    let dir = tempfile::tempdir().unwrap();
    let client = GenClient::new(profile(&server, Dialect::Interleaved))
        .unwrap()
        .with_image_dir(dir.path());
    assert!(matches!(
        client.generate(&r, &image_job(0, 5)),
        Err(GenError::PromptTooLarge { pairs: 5, .. })
    ));
}

#[test]
fn batch_order_is_independent_of_parallelism() {
    let server = MockServer::start(MockConfig {
        jitter_ms: 15,
        ..MockConfig::default()
    })
    .unwrap();
    let l = loader();
    let r = PromptRenderer::new(&l);
    let client = GenClient::new(profile(&server, Dialect::Interleaved)).unwrap();
    let jobs: Vec<PromptJob> = (0..40).map(|i| caption_job(i, 1 + i % 3)).collect();
    let strip = |v: Vec<_>| -> Vec<(String, Option<String>)> {
        v.into_iter()
            .map(|o: Result<unirag_genclient::GenerationOutput, GenError>| {
                let o = o.unwrap();
                (o.qid, o.text)
            })
            .collect()
    };
    let completion = Mutex::new(Vec::new());
    let serial = strip(run_batch(&client, &r, &jobs, 1, FailurePolicy::Skip, |_, _| {}).unwrap());
    let parallel = strip(
        run_batch(&client, &r, &jobs, 8, FailurePolicy::Skip, |i, _| {
            completion.lock().unwrap().push(i)
        })
        .unwrap(),
    );
    assert_eq!(serial, parallel);
    for (i, (qid, _)) in serial.iter().enumerate() {
        assert_eq!(qid, &jobs[i].qid);
    }
    assert_eq!(completion.into_inner().unwrap().len(), 40);
}

#[test]
fn injected_rate_limits_are_retried() {
    let server = MockServer::start(MockConfig {
        rate_limit_every: Some(10),
        ..MockConfig::default()
    })
    .unwrap();
    let l = loader();
    let r = PromptRenderer::new(&l);
    let client = GenClient::new(profile(&server, Dialect::InterleavedWithSystem)).unwrap();
    let jobs: Vec<PromptJob> = (0..100).map(|i| caption_job(i, 1)).collect();
    let out = run_batch(&client, &r, &jobs, 4, FailurePolicy::Abort, |_, _| {}).unwrap();
    assert!(out.iter().all(|o| o.is_ok()));
    let stats = server.stats();
    assert!(stats.faults >= 10, "{stats:?}");
    assert_eq!(stats.requests, 100 + stats.faults);
}

#[test]
fn abort_policy_stops_at_first_failure() {
    let server = MockServer::start(MockConfig {
        fail_status: Some(500),
        ..MockConfig::default()
    })
    .unwrap();
    let l = loader();
    let r = PromptRenderer::new(&l);
    let client = GenClient::new(profile(&server, Dialect::Interleaved)).unwrap();
    let jobs: Vec<PromptJob> = (0..10).map(|i| caption_job(i, 1)).collect();
    let err = run_batch(&client, &r, &jobs, 1, FailurePolicy::Abort, |_, _| {}).unwrap_err();
    assert_eq!(err.index, 0);
    assert!(matches!(err.error, GenError::Provider { status: 500, .. }));
    // One job, all of its attempts.
    assert_eq!(server.stats().requests, u64::from(FAST_RETRY.max_attempts));
}

#[test]
fn skip_policy_records_failures_and_continues() {
    let server = MockServer::start(MockConfig {
        fail_rules: vec![FailRule {
            needle: "number 21 ".into(),
            status: 400,
        }],
        ..MockConfig::default()
    })
    .unwrap();
    let l = loader();
    let r = PromptRenderer::new(&l);
    let client = GenClient::new(profile(&server, Dialect::Interleaved)).unwrap();
    let jobs: Vec<PromptJob> = (0..5).map(|i| caption_job(i, 1)).collect();
    let out = run_batch(&client, &r, &jobs, 2, FailurePolicy::Skip, |_, _| {}).unwrap();
    // caption_job(3, 1) uses example 21.
    for (i, o) in out.iter().enumerate() {
        match (i, o) {
            (3, Err(GenError::Provider { status: 400, body })) => assert!(body.contains("injected")),
            (3, other) => panic!("{other:?}"),
            (_, o) => assert!(o.is_ok()),
        }
    }
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let addr = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap()
    };
    let mut p = GeneratorProfile::new("down", Dialect::Interleaved, format!("http://{addr}"));
    p.retry = RetryPolicy {
        max_attempts: 3,
        base_delay_ms: 1,
        max_delay_ms: 2,
    };
    let l = loader();
    let r = PromptRenderer::new(&l);
    let client = GenClient::new(p).unwrap();
    assert!(matches!(
        client.generate(&r, &caption_job(0, 1)),
        Err(GenError::Transport { attempts: 3, .. })
    ));
    assert_eq!(client.request_count(), 3);
}

#[test]
fn five_thousand_one_shot_gpt4o_prompts_cost_about_45_usd() {
    let l = loader();
    let r = PromptRenderer::new(&l);
    let p = GeneratorProfile::preset("gpt-4o", "http://unused").unwrap();
    let mut total = 0.0;
    for chunk in (0..5_000).collect::<Vec<_>>().chunks(500) {
        let bundles: Vec<_> = chunk
            .iter()
            .map(|&i| {
                let job = caption_job(i, 1);
                r.render_few_shot(&job.query, &job.examples, job.task, p.dialect)
                    .unwrap()
            })
            .collect();
        total += estimate_cost(&p, &bundles).unwrap();
    }
    assert!((22.5..=67.5).contains(&total), "{total}");
}
