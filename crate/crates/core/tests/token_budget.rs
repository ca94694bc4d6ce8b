use std::sync::{Arc, Mutex};

use formulink_core::gateway::{
    assemble_prompt, split_sections, CompletionBackend, CompletionRequest, Gateway,
    GatewayError, ModelProfile, Passage, PromptBundle, SCRIPTED_BACKEND, SEPARATOR_TOKENS,
    SECTION_COUNT,
};
use formulink_core::kb::{count_tokens, ChunkRef, TokenSpan};
use proptest::prelude::*;

/// Records every prompt it receives.
#[derive(Default)]
struct Recorder {
    prompts: Mutex<Vec<(String, usize)>>,
}

impl CompletionBackend for Recorder {
    fn complete(&self, req: &CompletionRequest<'_>) -> Result<String, GatewayError> {
        self.prompts
            .lock()
            .unwrap()
            .push((req.prompt.text.clone(), req.prompt.token_count));
        Ok("ok".into())
    }
}

fn passage(i: usize, text: &str) -> Passage {
    Passage {
        chunk: ChunkRef {
            doc_id: "doc".into(),
            index: i,
        },
        token_span: TokenSpan::new(i * 100, i * 100 + 100),
        text: text.to_string(),
    }
}

/// A four-part bundle whose assembled count is exactly `target`.
fn bundle_of(target: usize) -> PromptBundle {
    let mut b = PromptBundle {
        system_text: "You formulate optimisation problems.".into(),
        memory_digest: "[r1] designer asked for EE".into(),
        retrieved: vec![passage(0, &"a".repeat(4000)), passage(1, &"b".repeat(2001))],
        user_turn: String::new(),
    };
    let used = assemble_prompt(&b).token_count;
    b.user_turn = "u".repeat((target - used) * 4);
    assert_eq!(assemble_prompt(&b).token_count, target);
    b
}

#[test]
fn boundary_dispatches_at_budget_and_rejects_one_over() {
    let recorder = Arc::new(Recorder::default());
    let mut g = Gateway::new();
    g.register_backend(SCRIPTED_BACKEND, recorder.clone()).unwrap();
    let profile = ModelProfile::scripted();
    assert_eq!(profile.prompt_budget().unwrap(), 13_000);

    let at = bundle_of(13_000);
    let done = g.complete(&at, &profile).unwrap();
    assert_eq!(done.prompt_tokens, 13_000);

    let mut over = at.clone();
    over.user_turn.push('u');
    assert_eq!(
        g.complete(&over, &profile),
        Err(GatewayError::ContextOversize {
            count: 13_001,
            budget: 13_000
        })
    );

    // Exactly one dispatch, carrying the full untruncated prompt.
    let prompts = recorder.prompts.lock().unwrap();
    assert_eq!(prompts.len(), 1);
    assert_eq!(g.dispatch_count(), 1);
    let (text, count) = &prompts[0];
    assert_eq!(*count, 13_000);
    assert_eq!(text, &assemble_prompt(&at).text);
    let [system, memory, knowledge, user] = split_sections(text).unwrap();
    assert_eq!(system, at.system_text);
    assert_eq!(memory, at.memory_digest);
    assert_eq!(user, at.user_turn);
    let rendered: String = at.retrieved.iter().map(Passage::render).collect();
    assert_eq!(knowledge, rendered);
}

proptest! {
    #[test]
    fn count_is_the_sum_of_retokenised_parts(
        system in "[a-z ]{0,300}",
        memory in "[a-z ]{0,300}",
        user in "\\PC{0,300}",
        passages in proptest::collection::vec("[a-zA-Z .]{0,400}", 0..6),
    ) {
        let bundle = PromptBundle {
            system_text: system,
            memory_digest: memory,
            retrieved: passages.iter().enumerate().map(|(i, t)| passage(i, t)).collect(),
            user_turn: user,
        };
        let prompt = assemble_prompt(&bundle);
        let parts = count_tokens(&bundle.system_text)
            + count_tokens(&bundle.memory_digest)
            + bundle.retrieved.iter().map(|p| count_tokens(&p.render())).sum::<usize>()
            + count_tokens(&bundle.user_turn);
        prop_assert_eq!(prompt.token_count, parts + SECTION_COUNT * SEPARATOR_TOKENS);
        // Per-part rounding keeps the flat count within one token per part.
        let flat = count_tokens(&prompt.text);
        let slack = 3 + bundle.retrieved.len();
        prop_assert!(flat <= prompt.token_count && prompt.token_count <= flat + slack);
    }
}
