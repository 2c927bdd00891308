//! The unified four-step generation prompt.

use crate::corpus::Passage;

pub const INSTRUCTIONS_HEADER: &str = "Instructions: Execute the following steps:";

pub const STEP_1: &str = "Step 1 - Claim extraction: From the input passage, extract a comprehensive set of claims. These claims must be atomic, i.e. semantically-coherent pieces of text that do not require further subdivision, and self-contained, i.e. not requiring additional context to be verified. Note that each claim must be short, using 15 words at most. Do not use \"...\" to truncate them. The ordering of the extracted claims must follow the logical flow expressed in the original text. Use a noun as the subject in the claim (avoid pronouns). All the claims that are featured in the input text must be reported in the list.";

pub const STEP_2: &str = "Step 2 - Claim falsification: From the output of Step 1, subtly alter one claim, in order to introduce a critical factual inaccuracy. Such claim must be the most relevant for the input text. It is forbidden to change dates, years, numbers and person/location/organization/etc. names. It is also forbidden to provide naive negative transformations of verbs, e.g., was -> was not, did -> did not. This step, i.e., Step 2, returns a pair containing the altered claim along with the original one.";

pub const STEP_3: &str = "Step 3 - Factual text generation: From the output of Step 1, generate a text. Note that this text must be a paraphrase of the original provided text, i.e. a new text that should overlap as little as possible with the original, while preserving the meaning. The generated text must follow the same logical flow as the ordering of the extracted claims.";

pub const STEP_4: &str = "Step 4 - Unfactual text generation: Generate a text from the final set of claims (original unaltered + altered) i.e. the output of Step 3. Note that the output of this step is not the original text, but the one generated from the final set of claims. Therefore this text contains unfactual information. The generated text must follow the same logical flow as the ordering of the claims. The output text must be as similar as possible to the output of Step 2, unless the unfactual part.";

pub const OUTPUT_FORMAT: &str = "Output format: Return the output in a JSON with the following format: { 'step_1': List[str], 'step_2': Tuple[str, str], 'step_3': str, 'step_4': str}. The output must be a valid JSON, thus try to avoid special characters like ' and \" inside the JSON values, unless you escape them with a \\. Do not include any marker for the altered claim inside the JSON values, e.g., # this is the altered claim. Please do not provide any preamble to your response, just give me the JSON.";

/// Output block for claim extraction alone.
pub const EXTRACTION_OUTPUT_FORMAT: &str = "Output format: Return the output in a JSON with the following format: { 'step_1': List[str]}. The output must be a valid JSON, thus try to avoid special characters like ' and \" inside the JSON values, unless you escape them with a \\. Please do not provide any preamble to your response, just give me the JSON.";

fn input_block(text: &str) -> String {
    format!("Input: {text}")
}

/// Input, the four step instructions, then the output-format block.
pub fn build_unified_prompt(passage: &Passage) -> String {
    [
        input_block(&passage.text).as_str(),
        INSTRUCTIONS_HEADER,
        STEP_1,
        STEP_2,
        STEP_3,
        STEP_4,
        OUTPUT_FORMAT,
    ]
    .join("\n\n")
}

/// Step 1 only, for extracting claims from an arbitrary text.
pub fn build_extraction_prompt(text: &str) -> String {
    [
        input_block(text).as_str(),
        INSTRUCTIONS_HEADER,
        STEP_1,
        EXTRACTION_OUTPUT_FORMAT,
    ]
    .join("\n\n")
}
