//! Pipeline scenarios shared by the orchestrator tests and the acceptance
//! suite.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use saturn_core::modelkit::ModelInput;
use saturn_core::orchestrator::{PipelineRun, RunStatus, TriggerKind, TriggerRequest};
use saturn_core::platform::Platform;

use super::{mixture_sample, mixture_sigma, new_model, platform, system, Fixture};

pub fn commit(p: &Platform, hash: &str, spec: &std::path::Path) -> String {
    p.orchestrator
        .submit_trigger(&system(), TriggerRequest::commit(hash, spec.to_str().unwrap()))
        .unwrap()
        .run_id
}

pub fn run(p: &Platform, run_id: &str) -> PipelineRun {
    p.orchestrator.execute_run(run_id).unwrap()
}

/// Pretrains an embedder and returns `(model_id, version_id)`.
pub fn pretrained(p: &Platform, fx: &Fixture) -> (String, String) {
    let model = new_model(p, "credit");
    let r = run(p, &commit(p, "c0", &fx.pretrain_spec(&model)));
    assert_eq!(r.status, RunStatus::Succeeded, "{:?}", r.logs);
    (model, r.produced_version.unwrap())
}

pub struct LoopOutcome {
    pub deployed: String,
    pub retrained: String,
    pub event_ids: Vec<String>,
    pub digests: Vec<String>,
}

pub fn closed_loop(seed: u64) -> LoopOutcome {
    let p = platform();
    let fx = Fixture::new(seed);
    let (model, base) = pretrained(&p, &fx);
    let r = run(&p, &commit(&p, "c1", &fx.finetune_spec(&model, &base, "deploy = credit\n")));
    let deployed = r.produced_version.clone().unwrap();
    let accuracy = p.registry.get_version(&system(), &deployed).unwrap().validation.unwrap().metrics.accuracy;
    assert!(accuracy >= 0.95, "deployed accuracy {accuracy}");

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let shift = 3.0 * mixture_sigma();
    for i in 0..1000 {
        let x = mixture_sample(&mut rng, if i < 500 { 0.0 } else { shift });
        p.serving.infer(&system(), "credit", &ModelInput::Features(x)).unwrap();
    }
    let events = p.monitor.events().unwrap();
    assert_eq!(events.len(), 1, "exactly one drift event");
    let submitted = p.pump().unwrap();
    assert_eq!(submitted.len(), 1);

    let drift_runs = p.orchestrator.list_runs(&system(), Some(TriggerKind::Drift), None).unwrap();
    assert_eq!(drift_runs.len(), 1);
    let ct = &drift_runs[0];
    assert_eq!(ct.status, RunStatus::Succeeded, "{:?}", ct.logs);
    assert_eq!(ct.trigger.trigger_id, format!("drift:{}", events[0].event_id));
    let retrained = ct.produced_version.clone().unwrap();
    let lineage = p.registry.lineage(&system(), &retrained).unwrap();
    assert_eq!(lineage[1].version_id, deployed);
    assert_eq!(p.serving.endpoint_by_route("credit").unwrap().bound_version, retrained);

    // Gate soundness over everything the pipeline released.
    for r in p.orchestrator.list_runs(&system(), None, None).unwrap() {
        let v = p.registry.get_version(&system(), r.produced_version.as_ref().unwrap()).unwrap();
        if v.stage.is_released() {
            let rep = v.validation.unwrap();
            assert!(rep.passed);
            assert_eq!(rep.gate_config_digest, r.gate.digest());
        }
    }
    // The retrained model is what now serves traffic, with a fresh reference.
    assert_eq!(p.monitor.outstanding_event(&ct.endpoint_id.clone().unwrap()).unwrap(), None);
    let resp = p
        .serving
        .infer(&system(), "credit", &ModelInput::Features(mixture_sample(&mut rng, 0.0)))
        .unwrap();
    assert_eq!(resp.model_version, retrained);

    let digests = p.registry.all_versions().into_iter().map(|v| v.artifact_digest).collect();
    LoopOutcome {
        deployed,
        retrained,
        event_ids: events.into_iter().map(|e| e.event_id).collect(),
        digests,
    }
}

