//! Prompt template text shared by the analysis stages.
//!
//! The long instruction blocks live here as constants so the stage builders
//! stay readable and tests can assert that required phrases survive
//! assembly. Everything is plain text; builders interpolate the variable
//! sections around these blocks.

pub const NONE_PROVIDED: &str = "(none provided)";
pub const RTL_MISSING: &str = "RTL context not available for this signal";

/// Fixed middle part of the scanner prompt: reference rules, the balanced
/// analysis requirement, the bug checklist, and the scoring rubric.
pub const SCAN_GUIDANCE: &str = "\
Based on the parent analysis and context, analyze this signal transition.

CRITICAL REQUIREMENT - EXACT RTL REFERENCES:
When analyzing any signal behavior or identifying issues, you MUST:

1. Provide exact file:line references from the RTL context
   Example: \"store_unit.sv:145-147\"

2. Quote the specific RTL code that shows the behavior
   Example:
   ```verilog
   assign valid_out = end_cnt ? 1'b1 : 1'b0;
   ```

3. NEVER make claims without showing the supporting RTL code
4. If RTL context is missing, explicitly state: \"RTL context not available for this signal\"

MANDATORY BALANCED ANALYSIS APPROACH:
YOU MUST PROVIDE BOTH SECTIONS - NEVER SKIP EITHER ONE:

1. Arguments FOR Being Suspicious (REQUIRED - MINIMUM 2 POINTS):
   - Even if the signal seems normal, you MUST identify at least 2 potential concerns
   - Consider: timing issues, edge cases, specification mismatches, unusual patterns
   - Think critically: What COULD go wrong? What assumptions might be invalid?

2. Arguments AGAINST Being Suspicious (REQUIRED - MINIMUM 2 POINTS):
   - Even if the signal seems problematic, you MUST provide at least 2 counterarguments
   - Consider: valid design patterns, expected behavior, specification compliance
   - Think: Why might this actually be correct behavior?

IMPORTANT: The LLM tends to assume signals are normal. To counteract this bias:
- Be MORE critical in the FOR section - look harder for potential issues
- Challenge assumptions - just because a signal follows RTL doesn't mean RTL is correct
- Consider specification violations, race conditions, and edge cases

Your analysis should examine:
- RTL Logic Correctness: Does the combinational logic make sense? Are there any logical inversions or operations that seem incorrect?
- Signal Dependencies: Are the boolean operations (AND, OR, NOT) used correctly? Could there be a logic error?
- Specification Alignment: Does the RTL match the intended behavior described in the specification?
- Common RTL Bugs:
  * Incorrect polarity (should a signal be inverted?)
  * Wrong logical operators (OR vs AND, etc.)
  * Missing or extra conditions in assignments
  * Circular dependencies or combinational loops
  * Reset/initialization issues
- Design Intent: Based on signal names, does the implementation make semantic sense?
- Edge Cases: Could the current logic fail under certain conditions?

IMPORTANT: Prioritize ROOT CAUSES over SYMPTOMS:
- A root cause is the earliest point where incorrect behavior originates
- A symptom is a downstream effect of a root cause
- Only mark signals as highly suspicious (greater than 0.7) if they are likely root causes
- For symptoms, use lower scores (0.3-0.5) and explicitly state which root cause they derive from

Use this scoring rubric for suspicion_score:
0.9-1.0: Direct RTL bug found (e.g., wrong operator, missing condition)
0.7-0.8: Likely logic error (e.g., incorrect state transition)
0.5-0.6: Suspicious pattern that might indicate issue
0.3-0.4: Downstream symptom of another issue
0.0-0.2: Normal behavior or insufficient evidence
";

/// Scanner output schema, including the exact section template the analysis
/// markdown must follow.
pub const SCAN_SCHEMA: &str = "\
### INSTRUCTIONS
Return a single JSON object where keys are node_id and values follow this schema:

{
  \"node_id\": {
    \"is_suspicious\": bool,
    \"is_key_event\": bool,
    \"suspicion_score\": float (0.0-1.0),
    \"importance_score\": float (0.0-1.0),
    \"causal_validity\": {\"parent_id\": bool, ...},
    \"analysis\": \"Structured markdown analysis following this EXACT template:

## Signal Behavior
[Description of what the signal does and its current value]

## RTL Evidence
- File: [filename:line_numbers]
```verilog
[relevant RTL code]
```

## Arguments FOR Being Suspicious (REQUIRED - MIN 2)
- [First potential issue/concern]
- [Second potential issue/concern]

## Arguments AGAINST Being Suspicious (REQUIRED - MIN 2)
- [First reason this might be normal]
- [Second reason this might be normal]

## Balanced Conclusion
[Weigh both sides and conclude whether this is suspicious or not]

## Root Cause vs Symptom
[If suspicious: Is this a root cause or symptom? If symptom, what's the root?]

## Fix Required
[If issue found: Specific code change needed. If not: 'No fix required']\"
  }
}
";

pub const SCAN_RETRY_SUFFIX: &str = "\n\nREMINDER: Your previous reply could not be parsed. Return ONLY the JSON \
object described in the INSTRUCTIONS section, with every listed node_id \
present and with at least 2 bullets under both the FOR and AGAINST sections.
";

/// Rover seed prompt around a suspicious node.
pub fn hypothesis_prompt(
    signal: &str,
    cycle: u64,
    value: &str,
    rtl_context: &str,
    spec_context: &str,
    prior_analysis: &str,
) -> String {
    format!(
        "\
Given a suspicious node in a hardware failure analysis, generate an initial hypothesis.

Node: {signal} at cycle {cycle}
Value: {value}
RTL Context: {rtl_context}
Spec Context: {spec_context}

# Prior Analysis From GraphScanner
{prior_analysis}

Generate a hypothesis about what might be wrong. Consider these possibilities:
- RTL bug (incorrect logic, missing conditions, wrong operators)
- Under-constrained inputs (missing assumptions in formal verification)
- Assertion/property issue (the checker itself might be wrong)
- Design intent mismatch (RTL correct but doesn't match specification)

Generate a hypothesis in JSON format:
{{
    \"title\": \"Brief title for the hypothesis\",
    \"hypothesis\": \"One-line hypothesis about what might be wrong (be specific about the type of issue)\",
    \"initial_insights\": [\"insight1\", \"insight2\", ...]
}}
"
    )
}

/// Rover frontier selection prompt. `frontier_lines` are pre-rendered
/// `- <key>: <signal> = <value>` rows, at most ten of them.
pub fn select_prompt(
    statement: &str,
    confidence: f64,
    events_found: usize,
    frontier_lines: &str,
) -> String {
    format!(
        "\
Given a narrative hypothesis and exploration frontier, select the most promising nodes to explore next.

Narrative: {statement}
Current confidence: {confidence:.2}
Events found: {events_found}

Exploration frontier:
{frontier_lines}
Select up to 3 nodes that would best help validate or refute this hypothesis.
Return as JSON: {{\"targets\": [\"node_id1\", \"node_id2\", ...]}}
"
    )
}

/// Rover per-node analysis prompt within a narrative.
pub fn analyze_prompt(
    statement: &str,
    timeline_lines: &str,
    signal: &str,
    cycle: u64,
    value: &str,
    rtl_context: &str,
    prior_analysis: &str,
) -> String {
    format!(
        "\
Analyze this node in the context of the narrative hypothesis.

Narrative: {statement}
Current timeline:
{timeline_lines}
Node to analyze: {signal} at cycle {cycle}
Value: {value}
RTL Context: {rtl_context}

# Prior Analysis From GraphScanner
{prior_analysis}

IMPORTANT: When providing evidence, directly quote or reference specific facts from the RTL context above.
For example: \"The RTL shows 'assign ready = valid && !busy' which indicates...\"

Determine:
1. Is this node relevant to the narrative?
2. Does it support or contradict the hypothesis?
3. Is it part of the critical path?
4. Extract specific evidence from the provided context

Return analysis as JSON with fields:
- is_relevant: boolean
- is_critical: boolean
- event_description: string (if relevant)
- importance: float (0-1)
- evidence_strength: float (0-1)
- evidence_for: [list of SPECIFIC facts/quotes from the RTL context that support the hypothesis]
- evidence_against: [list of SPECIFIC facts/quotes from the RTL context that contradict the hypothesis]
- new_insights: [list of analytical insights based on the evidence]
"
    )
}

/// Intrinsic-quality ranking prompt over the whole pool.
/// `hypothesis_blocks` holds pre-rendered `HYPOTHESIS #i (ID: ...)` sections
/// separated by `---` lines.
pub fn ranking_prompt(problem_description: &str, hypothesis_blocks: &str) -> String {
    format!(
        "\
You are an expert hardware verification engineer evaluating competing hypotheses for a formal verification failure.

PROBLEM DESCRIPTION:
{problem_description}

Your task is to rank these hypotheses based on their intrinsic qualities that correlate with correctness, WITHOUT knowing the ground truth.

HYPOTHESES TO EVALUATE:
{hypothesis_blocks}

EVALUATION CRITERIA:

Score each hypothesis on these dimensions (0.0 to 1.0):

1. Sufficiency (0.0-1.0): Does the hypothesis provide a complete explanation of the failure?
   - High (0.8-1.0): Fully explains the failure mechanism with clear causal chain
   - Medium (0.4-0.7): Partial explanation with some gaps
   - Low (0.0-0.3): Incomplete or superficial explanation

2. Evidence (0.0-1.0): Quality and quantity of supporting evidence from the causal analysis
   - High (0.8-1.0): Strong evidence with specific signal values, RTL snippets, and clear causal links
   - Medium (0.4-0.7): Some evidence but lacks specificity or completeness
   - Low (0.0-0.3): Weak or contradictory evidence

3. Mechanistic Insight (0.0-1.0): Clarity of the failure mechanism explanation
   - High (0.8-1.0): Clear explanation of HOW the bug manifests in hardware behavior
   - Medium (0.4-0.7): Some mechanistic understanding but unclear details
   - Low (0.0-0.3): Vague or incorrect understanding of hardware behavior

4. Actionability (0.0-1.0): Does it provide clear guidance on what to fix?
   - High (0.8-1.0): Specific fix location and clear correction needed
   - Medium (0.4-0.7): General area identified but unclear exact fix
   - Low (0.0-0.3): No clear fix guidance

5. Coherence (0.0-1.0): Internal consistency and logical flow
   - High (0.8-1.0): Logically consistent with no contradictions
   - Medium (0.4-0.7): Mostly consistent with minor issues
   - Low (0.0-0.3): Contains contradictions or illogical jumps

IMPORTANT CONSIDERATIONS:
- Favor hypotheses that identify specific RTL bugs over vague constraint issues
- Value concrete evidence (specific signal values, code snippets) over speculation
- Prefer hypotheses with clear causal chains showing propagation of errors
- Penalize hypotheses that blame tools/extraction without strong justification
- Reward specificity about the exact issue and its location

OUTPUT FORMAT:
Provide your evaluation as a JSON array where each element corresponds to a hypothesis:
[
    {{
        \"hypothesis_id\": \"ID of the hypothesis being evaluated\",
        \"sufficiency\": 0.85,
        \"evidence\": 0.90,
        \"mechanistic_insight\": 0.80,
        \"actionability\": 0.75,
        \"coherence\": 0.95,
        \"overall_score\": 0.85,
        \"reasoning\": \"Brief explanation of why these scores were assigned\",
        \"rank_suggestion\": 1
    }}
]

CRITICAL: Evaluate ALL hypotheses and return them in your suggested rank order (best first).
"
    )
}

/// Pairwise comparison prompt for tournament-style ranking.
pub fn duel_prompt(problem_description: &str, block_a: &str, block_b: &str) -> String {
    format!(
        "\
You are an expert hardware verification engineer comparing two competing hypotheses for a formal verification failure.

PROBLEM DESCRIPTION:
{problem_description}

HYPOTHESIS A:
{block_a}

HYPOTHESIS B:
{block_b}

Judge which hypothesis better explains the observed failure, weighing causal sufficiency, evidence quality, mechanistic clarity, actionability, and coherence.

Return as JSON: {{\"winner\": \"A\" or \"B\", \"reasoning\": \"brief justification\"}}
"
    )
}

/// Shared fix-generation instructions: output format plus hard requirements.
pub const FIX_CORE_INSTRUCTIONS: &str = "\
IMPORTANT: Please analyze this formal verification issue carefully and provide your response ONLY in the following JSON format:

{
    \"category\": \"RTL Bug\" or \"Under-Constraint\" or \"Over-Constraint\",
    \"analysis\": \"Your detailed analysis of the issue including root cause and evidence\",
    \"fixes\": [
        {
            \"buggy_code\": \"The EXACT problematic code snippet that needs to be fixed (must be an exact substring from the original code)\",
            \"code\": \"Your proposed fixed code that should replace the buggy code\",
            \"description\": \"Explanation of what this fix does and why it addresses the root cause\",
            \"confidence\": 0.9,
            \"location\": {
                \"module\": \"Target module name\",
                \"signal\": \"Target signal name\",
                \"file\": \"Target file path\",
                \"line\": 42
            }
        }
    ]
}

Please try to include at least 5 alternative fixes in RANKED ORDER.
The first fix should be your best solution (highest confidence).
Each additional fix should be an alternative approach with decreasing confidence.

CRITICAL REQUIREMENTS:
1. The \"buggy_code\" field MUST contain EXACT code that exists in the RTL
2. The \"code\" field must contain ACTUAL CORRECTED RTL CODE - not empty, not placeholders
3. Both fields must contain valid Verilog/SystemVerilog syntax
4. Generate AT LEAST 3-5 different fixes if possible
5. Focus on FUNCTIONAL bugs that affect behavior - NOT style issues
6. Do NOT add testbench/verification signals (like _assert)
7. Do NOT use angle brackets or placeholder text like \"TODO\", \"TBD\", etc.
8. Make sure the \"buggy_code\" is an exact substring that exists in the original code
9. The \"line\" number should point to the approximate location of the buggy code

WHITESPACE HANDLING:
- IMPORTANT: Pay careful attention to whitespace in the \"buggy_code\" field
- Use SPACES instead of TABS in your code - avoid using \\t characters
- Try to match the whitespace pattern from the original RTL code
- When in doubt, use single spaces between tokens (e.g., \"assign signal = value;\")
- The validation will try to match with flexible whitespace, but exact matches work best

IMPORTANT NOTES:
- Ensure your analysis thoroughly explains the root cause of the issue
- Provide multiple alternative fixes ranked from highest to lowest confidence
- Each fix should be a complete, working solution - no placeholders
- Consider different types of fixes:
  * RTL bug (incorrect logic, missing conditions, wrong operators)
  * Under-constrained inputs (missing assumptions in formal verification)
  * Assertion/property issue (the checker itself might be wrong)
  * Design intent mismatch (RTL correct but doesn't match specification)

STRICT SPAN RULES:
- Use a SINGLE, MINIMAL SPAN for both fields (one assignment or contiguous lines only)
- Do NOT include case labels, begin/end, or asserts in buggy_code or code
- We perform literal text replacement of buggy_code with code; include only the exact text to replace

Return either a JSON array of fixes or an object with a 'fixes' array.
Do NOT include any markdown code blocks or additional text outside the JSON.
";

pub const FIX_RETRY_SUFFIX: &str = "\n\nREMINDER: Every fix in your previous reply failed validation against the \
actual RTL. The \"buggy_code\" field MUST be copied verbatim from the RTL \
CODE section above - exact characters of an existing span, no paraphrasing. \
Return ONLY the JSON.
";

/// Ground-truth judging prompt used by the evaluation harness.
pub fn judge_prompt(
    problem_description: &str,
    golden_answer: &str,
    hypothesis_rank: usize,
    hypothesis: &str,
) -> String {
    format!(
        "\
You are an expert hardware verification engineer evaluating hypothesis quality for debugging formal verification failures.

PROBLEM DESCRIPTION:
{problem_description}

GOLDEN ANSWER (Ground Truth):
{golden_answer}

HYPOTHESIS TO EVALUATE (Rank #{hypothesis_rank}):
{hypothesis}

ADDITIONAL CONTEXT:
- This hypothesis was ranked #{hypothesis_rank} in a list of hypotheses
- The golden answer above shows the correct root cause identification (could be RTL bug, constraint issue, property issue, etc.)

EVALUATION TASK:
Score this hypothesis on the following dimensions (0.0 to 1.0):

1. Relevance (0.0-1.0): Does it address the actual issue described in the golden answer?
2. Preciseness (0.0-1.0): Is it specific about the root cause? Does it correctly identify the exact issue?
3. Causal_Timeline (0.0-1.0): Does it include a causal timeline or temporal analysis showing how the bug manifests over time? Higher scores for detailed cycle-by-cycle analysis.
4. Correctness (0.0-1.0): Does it correctly identify the root cause as shown in the golden answer?

SCORING GUIDELINES:
- High relevance (0.8-1.0): Directly mentions the specific issue from the golden answer
- Medium relevance (0.4-0.7): Mentions related issues but not the specific root cause
- Low relevance (0.0-0.3): Vague or mentions unrelated issues

- High preciseness (0.8-1.0): Specifically identifies the exact issue as in the golden answer
- Medium preciseness (0.4-0.7): Mentions the general area of the issue but lacks specifics
- Low preciseness (0.0-0.3): Vague statements without specific identification

- High causal_timeline (0.8-1.0): Includes detailed cycle-by-cycle timeline showing bug progression
- Medium causal_timeline (0.4-0.7): Includes some temporal analysis or partial timeline
- Low causal_timeline (0.0-0.3): No timeline or temporal analysis provided

- High correctness (0.8-1.0): Correctly identifies the root cause as shown in golden answer
- Medium correctness (0.4-0.7): Partially correct but includes incorrect elements
- Low correctness (0.0-0.3): Incorrect or focuses on non-existent issues

IMPORTANT CONSIDERATIONS:
- Score based on alignment with the golden answer, regardless of whether it's an RTL bug, constraint issue, or property issue
- Hypotheses that identify a different type of issue than the golden answer should receive lower scores
- Value specificity: hypotheses that identify the exact issue (e.g., specific condition, signal, or constraint) should score higher
- REWARD detailed causal timelines that show the bug's progression through cycles - this demonstrates thorough analysis
- Do NOT penalize verbosity if it provides valuable temporal analysis or causal chain information

OUTPUT FORMAT:
Provide your evaluation in the following JSON format:
{{
    \"relevance\": <float between 0.0 and 1.0>,
    \"preciseness\": <float between 0.0 and 1.0>,
    \"causal_timeline\": <float between 0.0 and 1.0>,
    \"correctness\": <float between 0.0 and 1.0>,
    \"overall\": <float between 0.0 and 1.0 (average of the four scores)>,
    \"reasoning\": \"<brief explanation of scores>\"
}}

Analyze the hypothesis carefully and provide your JSON evaluation:
"
    )
}
