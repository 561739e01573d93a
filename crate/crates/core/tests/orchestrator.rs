mod common;

use std::collections::BTreeSet;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use common::scenario::*;
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use saturn_core::clock::SteppingClock;
use saturn_core::governance::{Grant, Principal, Resource, ResourceKind, Role};
use saturn_core::modelkit::ModelInput;
use saturn_core::orchestrator::{PipelineRun, RunStatus, Stage, StageStatus, TriggerKind, TriggerRequest};
use saturn_core::platform::{Platform, PlatformConfig};
use saturn_core::registry::LifecycleStage;
use saturn_core::serving::EndpointStatus;
use saturn_core::store::Table;
use saturn_core::Error;

fn statuses(r: &PipelineRun) -> Vec<StageStatus> {
    r.stages.iter().map(|s| s.status).collect()
}

#[test]
fn commit_trigger_creates_one_pending_run() {
    let p = platform();
    let fx = Fixture::new(1);
    let model = new_model(&p, "m");
    let spec = fx.pretrain_spec(&model);
    let first = p
        .orchestrator
        .submit_trigger(&system(), TriggerRequest::commit("c1", spec.to_str().unwrap()))
        .unwrap();
    assert!(!first.duplicate);
    assert_eq!(first.trigger_id, "commit:c1");
    let r = p.orchestrator.get_run(&system(), &first.run_id).unwrap();
    assert_eq!(r.status, RunStatus::Queued);
    assert_eq!(statuses(&r), vec![StageStatus::Pending; 4]);
    assert_eq!(r.stages.iter().map(|s| s.stage).collect::<Vec<_>>(), Stage::ALL);

    let again = p
        .orchestrator
        .submit_trigger(&system(), TriggerRequest::commit("c1", spec.to_str().unwrap()))
        .unwrap();
    assert!(again.duplicate);
    assert_eq!(again.run_id, first.run_id);
    assert_eq!(p.orchestrator.list_runs(&system(), None, None).unwrap().len(), 1);
    assert_eq!(p.orchestrator.pending_count(), 1);
}

#[test]
fn pretrain_run_releases_a_base_model() {
    let p = platform();
    let fx = Fixture::new(2);
    let (_, version) = pretrained(&p, &fx);
    let v = p.registry.get_version(&system(), &version).unwrap();
    assert_eq!(v.stage, LifecycleStage::Released);
    assert_eq!(v.parent_version, None);
    let report = v.validation.unwrap();
    assert!(report.passed);
    assert!(report.metrics.accuracy >= 0.9, "probe accuracy {}", report.metrics.accuracy);
    let r = &p.orchestrator.list_runs(&system(), None, None).unwrap()[0];
    assert_eq!(report.gate_config_digest, r.gate.digest());
    assert_eq!(r.stage(Stage::Deploy).status, StageStatus::Skipped);
    assert!(!r.rejected);
}

#[test]
fn finetune_run_deploys_and_monitors() {
    let p = platform();
    let fx = Fixture::new(3);
    let (model, base) = pretrained(&p, &fx);
    let r = run(&p, &commit(&p, "c1", &fx.finetune_spec(&model, &base, "deploy = credit\n")));
    assert_eq!(r.status, RunStatus::Succeeded, "{:?}", r.logs);
    assert_eq!(statuses(&r), vec![StageStatus::Succeeded; 4]);

    let version = r.produced_version.clone().unwrap();
    let v = p.registry.get_version(&system(), &version).unwrap();
    assert_eq!(v.stage, LifecycleStage::Monitored);
    assert_eq!(v.parent_version.as_deref(), Some(base.as_str()));
    assert!(v.validation.as_ref().unwrap().metrics.accuracy >= 0.95);
    assert!(v.validation.as_ref().unwrap().fairness.is_some());

    let ep = p.serving.endpoint_by_route("credit").unwrap();
    assert_eq!(ep.status, EndpointStatus::Live);
    assert_eq!(ep.bound_version, version);
    assert_eq!(r.endpoint_id.as_deref(), Some(ep.endpoint_id.as_str()));

    // Stage timestamps never go backwards.
    let mut last = r.received_at;
    for s in &r.stages {
        let (a, b) = (s.started_at.unwrap(), s.finished_at.unwrap());
        assert!(last <= a && a <= b);
        last = b;
    }
    assert!(last <= r.finished_at.unwrap());
}

#[test]
fn unsatisfiable_gate_rejects_without_failing() {
    let p = platform();
    let fx = Fixture::new(4);
    let (model, base) = pretrained(&p, &fx);
    let spec = fx.finetune_spec(&model, &base, "deploy = credit\ngate.min_accuracy = 1.01\n");
    let r = run(&p, &commit(&p, "c1", &spec));
    assert_eq!(r.status, RunStatus::Succeeded);
    assert!(r.rejected);
    assert_eq!(
        statuses(&r),
        vec![
            StageStatus::Succeeded,
            StageStatus::Succeeded,
            StageStatus::Succeeded,
            StageStatus::Skipped
        ]
    );
    let v = p.registry.get_version(&system(), r.produced_version.as_ref().unwrap()).unwrap();
    assert_eq!(v.stage, LifecycleStage::Rejected);
    assert!(!v.validation.unwrap().passed);
    assert!(matches!(p.serving.endpoint_by_route("credit"), Err(Error::NotFound(_))));
}

#[test]
fn missing_dataset_fails_train_and_skips_the_rest() {
    let p = platform();
    let fx = Fixture::new(5);
    let model = new_model(&p, "m");
    let spec = fx.spec(
        "broken.spec",
        &format!("task = pretrain\nmodel_id = {model}\ndataset = nowhere.txt\nvalidation = probe.tsv\n"),
    );
    let r = run(&p, &commit(&p, "c1", &spec));
    assert_eq!(r.status, RunStatus::Failed);
    assert_eq!(
        statuses(&r),
        vec![
            StageStatus::Failed,
            StageStatus::Skipped,
            StageStatus::Skipped,
            StageStatus::Skipped
        ]
    );
    assert!(r.stage(Stage::Train).message.as_ref().unwrap().contains("nowhere.txt"));
    for s in &r.stages[1..] {
        assert!(s.started_at.is_none());
    }
    assert!(r.produced_version.is_none());
    assert!(p.registry.all_versions().is_empty());
    // Terminal runs are immutable.
    assert_eq!(p.orchestrator.execute_run(&r.run_id).unwrap(), r);
}

#[test]
fn unresolvable_payloads_are_invalid_input() {
    let p = platform();
    let fx = Fixture::new(6);
    let model = new_model(&p, "m");
    let invalid = |req: TriggerRequest| {
        let e = p.orchestrator.submit_trigger(&system(), req).unwrap_err();
        assert!(matches!(e, Error::InvalidInput(_)), "{e:?}");
    };
    invalid(TriggerRequest::commit("c1", fx.pretrain_spec("mdl-999999").to_str().unwrap()));
    invalid(TriggerRequest::commit("c2", fx.path().join("missing.spec").to_str().unwrap()));
    invalid(TriggerRequest::commit(
        "c3",
        fx.finetune_spec(&model, "ver-999999", "").to_str().unwrap(),
    ));
    invalid(TriggerRequest::commit("bad ref", fx.pretrain_spec(&model).to_str().unwrap()));
    invalid(TriggerRequest::drift("evt-unknown"));
    invalid(TriggerRequest::default());
    invalid(TriggerRequest {
        kind: Some(TriggerKind::Manual),
        ..Default::default()
    });
    // Rejected triggers leave nothing behind, so they can be retried.
    assert!(p.orchestrator.list_runs(&system(), None, None).unwrap().is_empty());
    assert!(p.orchestrator.trigger_run("commit:c1").unwrap().is_none());
}

#[test]
fn manual_triggers_get_unique_ids_unless_named() {
    let p = platform();
    let fx = Fixture::new(7);
    let model = new_model(&p, "m");
    let text = std::fs::read_to_string(fx.pretrain_spec(&model)).unwrap().replace(
        "corpus.txt",
        fx.corpus.to_str().unwrap(),
    );
    let text = text.replace("probe.tsv", fx.probe.to_str().unwrap());
    let a = p.orchestrator.submit_trigger(&system(), TriggerRequest::manual_inline(&text)).unwrap();
    let b = p.orchestrator.submit_trigger(&system(), TriggerRequest::manual_inline(&text)).unwrap();
    assert_ne!(a.trigger_id, b.trigger_id);
    assert!(a.trigger_id.starts_with("manual:"));
    let named = TriggerRequest {
        trigger_id: Some("redeploy-1".into()),
        ..TriggerRequest::manual_inline(&text)
    };
    let c = p.orchestrator.submit_trigger(&system(), named.clone()).unwrap();
    let d = p.orchestrator.submit_trigger(&system(), named).unwrap();
    assert_eq!(c.trigger_id, "manual:redeploy-1");
    assert_eq!((c.run_id, false), (d.run_id, !d.duplicate));
    let done = p.orchestrator.run_pending().unwrap();
    assert_eq!(done.len(), 3);
    assert!(done.iter().all(|r| r.status == RunStatus::Succeeded));
}

#[test]
fn list_filters_and_ordering() {
    let p = platform();
    let fx = Fixture::new(8);
    let model = new_model(&p, "m");
    let good = fx.pretrain_spec(&model);
    let bad = fx.spec(
        "bad.spec",
        &format!("task = pretrain\nmodel_id = {model}\ndataset = gone.txt\nvalidation = probe.tsv\n"),
    );
    commit(&p, "a", &good);
    commit(&p, "b", &bad);
    commit(&p, "c", &good);
    p.orchestrator.run_pending().unwrap();
    let all = p.orchestrator.list_runs(&system(), None, None).unwrap();
    assert_eq!(
        all.iter().map(|r| r.trigger.trigger_id.as_str()).collect::<Vec<_>>(),
        ["commit:a", "commit:b", "commit:c"]
    );
    assert!(all.windows(2).all(|w| w[0].received_at <= w[1].received_at));
    let failed = p.orchestrator.list_runs(&system(), None, Some(RunStatus::Failed)).unwrap();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].trigger.trigger_id, "commit:b");
    assert!(p
        .orchestrator
        .list_runs(&system(), Some(TriggerKind::Drift), None)
        .unwrap()
        .is_empty());
    let once = p.orchestrator.get_run(&system(), &all[0].run_id).unwrap();
    assert_eq!(once, p.orchestrator.get_run(&system(), &all[0].run_id).unwrap());
    assert!(matches!(
        p.orchestrator.get_run(&system(), "run-999999"),
        Err(Error::NotFound(_))
    ));
}

#[test]
fn pipeline_access_is_checked() {
    let p = platform();
    let fx = Fixture::new(9);
    let model = new_model(&p, "m");
    let spec = fx.pretrain_spec(&model);
    let eve = Principal::new("eve").unwrap();
    let req = TriggerRequest::commit("c1", spec.to_str().unwrap());
    assert!(matches!(p.orchestrator.submit_trigger(&eve, req.clone()), Err(Error::Forbidden(_))));
    assert!(matches!(p.orchestrator.list_runs(&eve, None, None), Err(Error::Forbidden(_))));
    p.acl
        .grant(Grant {
            principal: eve.clone(),
            role: Role::Writer,
            resource: Resource::AllOf(ResourceKind::Pipeline),
        })
        .unwrap();
    // Pipeline rights alone do not let a caller retrain somebody's model.
    assert!(matches!(p.orchestrator.submit_trigger(&eve, req.clone()), Err(Error::Forbidden(_))));
    p.acl
        .grant(Grant {
            principal: eve.clone(),
            role: Role::Writer,
            resource: Resource::model(&model),
        })
        .unwrap();
    assert!(!p.orchestrator.submit_trigger(&eve, req).unwrap().duplicate);
    assert_eq!(p.orchestrator.list_runs(&eve, None, None).unwrap().len(), 1);
}

#[test]
fn restart_resumes_from_first_unfinished_stage() {
    let fx = Fixture::new(10);
    let data = tempfile::tempdir().unwrap();
    let cfg = PlatformConfig {
        data_dir: Some(data.path().to_path_buf()),
        ..inline_config()
    };
    let open = || Platform::open_with_clock(cfg.clone(), Arc::new(SteppingClock::fixed())).unwrap();

    let (finished, queued) = {
        let p = open();
        let (model, base) = pretrained(&p, &fx);
        let done = run(&p, &commit(&p, "c1", &fx.finetune_spec(&model, &base, "")));
        let queued = commit(&p, "c2", &fx.finetune_spec(&model, &base, ""));
        // Pretend the process died right after REGISTER created the version
        // but before the stage was recorded as finished.
        let mut crashed = done.clone();
        crashed.status = RunStatus::Running;
        crashed.finished_at = None;
        for s in &mut crashed.stages[2..] {
            s.status = StageStatus::Pending;
            s.started_at = None;
            s.finished_at = None;
        }
        crashed.stages[2].status = StageStatus::Running;
        p.store.put(Table::Runs, &crashed.run_id, &crashed).unwrap();
        (done, queued)
    };

    let p = open();
    assert_eq!(p.orchestrator.pending_count(), 2);
    let versions_before = p.registry.all_versions().len();
    let resumed = p.orchestrator.run_pending().unwrap();
    assert_eq!(resumed.len(), 2);
    let again = p.orchestrator.get_run(&system(), &finished.run_id).unwrap();
    assert_eq!(again.status, RunStatus::Succeeded);
    // Registration is keyed by trigger id, so no second version appears.
    assert_eq!(again.produced_version, finished.produced_version);
    assert_eq!(again.artifact_digest, finished.artifact_digest);
    assert!(again.logs.iter().any(|l| l.contains("resumed")));
    assert_eq!(p.registry.all_versions().len(), versions_before + 1);
    let q = p.orchestrator.get_run(&system(), &queued).unwrap();
    assert_eq!(q.status, RunStatus::Succeeded);
    assert_ne!(q.produced_version, finished.produced_version);
}

#[test]
fn concurrent_submissions_and_workers() {
    let fx = Fixture::new(11);
    let mut cfg = inline_config();
    cfg.pipeline.workers = 3;
    let p = Platform::open_with_clock(cfg, Arc::new(SteppingClock::fixed())).unwrap();
    let models: Vec<String> = (0..2).map(|i| new_model(&p, &format!("m{i}"))).collect();
    let specs: Vec<_> = models
        .iter()
        .map(|m| {
            fx.spec(
                &format!("{m}.spec"),
                &format!("task = pretrain\nmodel_id = {m}\ndataset = corpus.txt\nvalidation = probe.tsv\nk = 4\n"),
            )
        })
        .collect();

    let handles: Vec<_> = (0..8)
        .map(|t| {
            let p = p.clone();
            let specs = specs.clone();
            std::thread::spawn(move || {
                (0..10)
                    .map(|i| {
                        let n = (i + t) % 6;
                        let spec = &specs[n % 2];
                        p.orchestrator
                            .submit_trigger(&system(), TriggerRequest::commit(format!("h{n}"), spec.to_str().unwrap()))
                            .unwrap()
                    })
                    .collect::<Vec<_>>()
            })
        })
        .collect();
    let outcomes: Vec<_> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
    let fresh = outcomes.iter().filter(|o| !o.duplicate).count();
    assert_eq!(fresh, 6);
    let ids: BTreeSet<_> = outcomes.iter().map(|o| (o.trigger_id.clone(), o.run_id.clone())).collect();
    assert_eq!(ids.len(), 6, "each trigger maps to one run");

    {
        let _bg = p.start();
        let deadline = std::time::Instant::now() + std::time::Duration::from_secs(60);
        while p
            .orchestrator
            .list_runs(&system(), None, None)
            .unwrap()
            .iter()
            .any(|r| !r.status.is_terminal())
        {
            assert!(std::time::Instant::now() < deadline, "workers stalled");
            std::thread::sleep(std::time::Duration::from_millis(10));
        }
    }
    let runs = p.orchestrator.list_runs(&system(), None, None).unwrap();
    assert_eq!(runs.len(), 6);
    assert!(runs.iter().all(|r| r.status == RunStatus::Succeeded));
    // Runs for the same model never overlap in time.
    for m in &models {
        let mut spans: Vec<_> = runs
            .iter()
            .filter(|r| &r.spec.model_id == m)
            .map(|r| (r.stages[0].started_at.unwrap(), r.finished_at.unwrap()))
            .collect();
        spans.sort();
        for w in spans.windows(2) {
            assert!(w[0].1 <= w[1].0, "overlapping runs for {m}");
        }
    }
    let stop = Arc::new(AtomicBool::new(true));
    assert!(p.orchestrator.spawn_workers(1, stop).into_iter().all(|h| h.join().is_ok()));
}

#[test]
fn drift_closes_the_loop_deterministically() {
    let a = closed_loop(42);
    let b = closed_loop(42);
    assert_eq!(a.deployed, b.deployed);
    assert_eq!(a.retrained, b.retrained);
    assert_eq!(a.event_ids, b.event_ids);
    assert_eq!(a.digests, b.digests);
}

#[test]
fn drift_on_a_hand_deployed_version_is_not_retrainable() {
    let p = platform();
    let fx = Fixture::new(12);
    let (_, base) = pretrained(&p, &fx);
    // A bare embedder served directly has no fine-tuning recipe to reuse.
    p.serving.create_endpoint(&system(), &base, "raw").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for i in 0..700 {
        let label = i % 2 == 0;
        let topic = if i < 500 { label } else { true };
        let toks = topic_line(&mut rng, topic, 5);
        p.serving.infer(&system(), "raw", &ModelInput::Tokens(toks)).unwrap();
    }
    let events = p.monitor.events().unwrap();
    assert!(!events.is_empty());
    let e = p
        .orchestrator
        .submit_trigger(&system(), TriggerRequest::drift(&events[0].event_id))
        .unwrap_err();
    assert!(matches!(e, Error::InvalidInput(_)), "{e:?}");
    assert!(p.pump().unwrap().is_empty());
    assert!(p.orchestrator.list_runs(&system(), None, None).unwrap().len() == 1);
}
