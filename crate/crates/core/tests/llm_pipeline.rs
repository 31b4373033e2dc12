use std::sync::Arc;

use gridprompt::config::Horizon;
use gridprompt::harness::{self, EvalRun};
use gridprompt::llm_client::ScriptedBackend;
use gridprompt::policy::{LlmPolicy, ModelSettings, PfCadence, PolicySpec};
use gridprompt::{ConfigId, RunConfig, StrategyFlags};

const STRATEGY_KEY: &str = "Previous strategy";

fn run(flags: StrategyFlags, episodes: u32, horizon: u32, backend: Arc<ScriptedBackend>, tweak: impl FnOnce(&mut LlmPolicy)) -> EvalRun {
    let cfg = RunConfig {
        episodes,
        max_steps: Horizon::Steps(horizon),
        seed: 1,
        ..RunConfig::new(ConfigId::Empty5x5Random, PolicySpec::llm(flags))
    };
    let mut policy = LlmPolicy::new(backend, flags, ModelSettings::default()).unwrap();
    tweak(&mut policy);
    harness::run_eval_with(&cfg, &policy).unwrap()
}

#[test]
fn base_prompt_depends_only_on_the_observation() {
    let lefts = || Arc::new(ScriptedBackend::new(vec!["turn_left"; 8]));
    let r = run(StrategyFlags::HWBP, 1, 8, lefts(), |_| {});
    // Four left turns bring the agent back to its starting pose.
    assert_eq!(r.steps[0].prompt, r.steps[4].prompt);
    assert_ne!(r.steps[0].prompt, r.steps[1].prompt);

    let df = StrategyFlags { df: true, ..StrategyFlags::HWBP };
    let r = run(df, 1, 8, lefts(), |_| {});
    assert_ne!(r.steps[0].prompt, r.steps[4].prompt);
}

#[test]
fn calls_per_step_are_one_plus_pf_plus_retries() {
    let replies = ["uh", "turn_left", "turn_left", "hmm", "no idea", "forward", "right"];
    let backend = Arc::new(ScriptedBackend::new(replies).with_keyed(STRATEGY_KEY, "Keep turning."));
    let flags = StrategyFlags { pf: true, ..StrategyFlags::HWBP };
    let r = run(flags, 1, 4, backend.clone(), |_| {});
    let retries: Vec<u32> = r.steps.iter().map(|s| s.retries).collect();
    assert_eq!(retries, vec![1, 0, 2, 0]);
    for s in &r.steps {
        assert_eq!(s.generation_calls, 1 + 1 + s.retries);
        assert_eq!(s.summary.as_deref(), Some("Keep turning."));
    }
    assert_eq!(backend.calls(), 7 + 4);
    assert_eq!(r.report.episodes[0].generation_calls, 11);
}

#[test]
fn unparseable_replies_fall_back_and_are_counted() {
    let backend = Arc::new(ScriptedBackend::new(vec!["I am not sure."; 10]));
    let r = run(StrategyFlags::HWBP, 1, 10, backend, |p| p.retry_budget = 0);
    assert!(r.steps.iter().all(|s| s.parse_failure && s.action == "turn_left"));
    assert_eq!(r.report.parse_failure_rate, 1.0);
    assert_eq!(r.report.success_rate, 0.0);
}

fn first_prompt_of(run: &EvalRun, episode: u64) -> String {
    run.steps.iter().find(|s| s.episode == episode).unwrap().prompt.clone().unwrap()
}

#[test]
fn strategy_crosses_episodes_only_when_asked() {
    let within = StrategyFlags { pf: true, ..StrategyFlags::HWBP };
    let across = StrategyFlags { pf_across_episodes: true, ..within };
    for (flags, carried) in [(within, false), (across, true)] {
        let backend = Arc::new(ScriptedBackend::new(vec!["turn_left"; 6]).with_keyed(STRATEGY_KEY, "Spin in place."));
        let r = run(flags, 2, 3, backend, |_| {});
        assert!(!first_prompt_of(&r, 0).contains("Spin in place."));
        assert_eq!(first_prompt_of(&r, 1).contains("Spin in place."), carried, "{}", flags.label());
        // Within an episode the latest strategy is always shown.
        let second = r.steps.iter().filter(|s| s.episode == 1).nth(1).unwrap();
        assert!(second.prompt.as_deref().unwrap().contains("Spin in place."));
    }
}

#[test]
fn episode_cadence_summarizes_at_episode_end() {
    let across = StrategyFlags { pf: true, pf_across_episodes: true, ..StrategyFlags::HWBP };
    let backend = Arc::new(ScriptedBackend::new(vec!["turn_left"; 6]).with_keyed(STRATEGY_KEY, "Try going east."));
    let r = run(across, 2, 3, backend.clone(), |p| p.pf_cadence = PfCadence::Episode);
    assert!(r.steps.iter().all(|s| s.summary.is_none()));
    assert!(first_prompt_of(&r, 1).contains("Try going east."));
    assert!(!r.steps.iter().filter(|s| s.episode == 0).any(|s| s.prompt.as_deref().unwrap().contains("Try going east.")));
    // Six step calls plus one summary after each episode.
    assert_eq!(backend.calls(), 8);
}

#[test]
fn prompt_budget_is_respected() {
    let flags = StrategyFlags { df: true, ..StrategyFlags::HWBP };
    let budget = 1300;
    let scripted = || Arc::new(ScriptedBackend::new(vec!["turn_left"; 30]));
    let full = run(flags, 1, 30, scripted(), |_| {});
    assert!(full.steps.last().unwrap().prompt.as_ref().unwrap().chars().count() > budget);
    let r = run(flags, 1, 30, scripted(), |p| p.prompt_budget = Some(budget));
    let lens: Vec<usize> = r.steps.iter().map(|s| s.prompt.as_ref().unwrap().chars().count()).collect();
    assert!(lens.iter().all(|&l| l <= budget), "{lens:?}");
    // History is dropped oldest-first, so late prompts still show the last step.
    let last = r.steps.last().unwrap().prompt.as_ref().unwrap();
    assert!(last.contains("Step 29:"), "{last}");
}
