"""Prompt templates for constraint rewriting and pairwise judging.

Rewrite templates use the literal placeholder ``{Given Instruction}`` and the
judge template uses ``{question}``, ``{answer of assistant a}`` and
``{answer of assistant b}``. Substitution is plain string replacement so
braces or verdict markers inside user text pass through untouched.
"""

from __future__ import annotations

GIVEN_INSTRUCTION = "{Given Instruction}"

_REWRITE_HEADER = (
    "You are an Instruction Rewriting Expert. You need to rewrite #Given Instruction# based on "
    "#Rewriting Requirement#, in order to obtain a #Rewritten Instruction#. Basically, "
    "#Rewritten Instruction# should adhere to the following guidelines:\n"
    "1. Your rewriting cannot omit the non-text parts such as the table and code in "
    "#Given Instruction#.\n"
    "2. #Rewritten Instruction# must be reasonable and must be understood and responded to by "
    "humans.\n"
    "3. You should try your best not to make the #Rewritten Instruction# become verbose, "
    "#Rewritten Instruction# can only add 10 to 20 words into #Given Instruction#.\n"
    "/* The Given Instruction */\n"
    "{Given Instruction}\n"
    "/* Rewriting Requirement */\n"
)

_JSON_FOOTER = (
    "Please output in JSON format with the fields 'modified_instruction' for the modified "
    "instruction and 'added_constraint' for the added constraint."
)

CONTENT_OPEN_QA = _REWRITE_HEADER + (
    "Please add one proper content constraint to the #Given Instruction#. The content "
    "constraints include but are not limited to:\n"
    "1. Add a Subtask or Another Related Question.\n"
    "2. Narrow Down the Topic: Instead of a general theme or topic, provide a more specific "
    "subset.\n"
    "3. Set a Higher Standard: Raise the bar for what's considered acceptable or successful.\n"
    "4. Limit Resources: Restrict the number or type of resources someone can use.\n"
    "5. Introduce Specific Criteria: Mandate particular components or features that must be "
    "included.\n"
    "6. Specifying Sequence: Dictate the order in which certain steps or actions should be "
    "taken.\n"
) + _JSON_FOOTER

CONTENT_LANGUAGE = _REWRITE_HEADER + (
    "Please add one proper content constraint to the #Given Instruction#. The content "
    "constraints include but are not limited to:\n"
    "1. Specify Language Complexity: Determine whether the text should use simple, "
    "intermediate, or advanced language.\n"
    "2. Control Output Length: Set limits on the text's length, such as maximum word count or "
    "number of paragraphs.\n"
    "3. Restrict Vocabulary: Include or exclude specific words or phrases, or limit the range "
    "of vocabulary.\n"
    "4. Mandate Structure: Require a specific format, such as headings, bullet points, or a "
    "particular narrative style.\n"
) + _JSON_FOOTER

SITUATION_SUGGESTION = _REWRITE_HEADER + (
    "Please add one proper situation constraint to the #Given Instruction#. The situation "
    "constraints include but are not limited to:\n"
    "1. Define the Context: Specify a particular situation or environment that the "
    "suggestions should be relevant to.\n"
    "2. Introduce a Specific Problem: Focus on addressing a distinct problem or challenge that "
    "needs suggestions.\n"
    "3. Impose Urgency: Include a time constraint or urgency for when the suggestions should "
    "be applied.\n"
    "4. Limit Options: Restrict the scope of potential suggestions to a narrower set of "
    "choices.\n"
    "5. Add Dependencies: Require that suggestions consider certain conditions or "
    "prerequisites.\n"
    "6. Prioritize Outcomes: Highlight specific outcomes or goals that the suggestions should "
    "aim to achieve.\n"
) + _JSON_FOOTER

SITUATION_ROLE_PLAY = _REWRITE_HEADER + (
    "Please add one proper situation constraint to the #Given Instruction#. The situation "
    "constraints include but are not limited to:\n"
    "1. Specify a Role: Clearly define the role or persona to be taken on during the "
    "role-play.\n"
    "2. Define the Setting: Outline the environment or context in which the role-play should "
    "occur.\n"
    "3. Add Conflict or Challenge: Introduce a specific problem, conflict, or challenge that "
    "must be addressed within the role-play.\n"
    "4. Limit the Actions: Restrict the types or number of actions that can be taken during "
    "the role-play.\n"
    "5. Set Specific Goals: Define clear objectives that the role-player must achieve.\n"
    "6. Introduce Time Constraints: Impose a time limit for the role-play to unfold or for "
    "certain actions to be completed.\n"
) + _JSON_FOOTER

SITUATION_STORY = _REWRITE_HEADER + (
    "Please add one proper situation constraint to the #Given Instruction#. The situation "
    "constraints include but are not limited to:\n"
    "1. Define Character Archetypes: Specify certain archetypes or roles characters should "
    "fulfill, such as a hero, mentor, or antagonist.\n"
    "2. Include Specific Plot Points: Mandate the inclusion of certain events or plot twists "
    "that must occur.\n"
    "3. Moral Dilemmas: Introduce a scenario where the characters must make a tough decision "
    "that involves competing ethical principles or risks.\n"
) + _JSON_FOOTER

# The published style template has no output-format line; the JSON footer is
# appended so the reply can be parsed like the others.
STYLE = _REWRITE_HEADER + (
    "Please add one proper style constraint to the #Given Instruction#. The style constraints "
    "include but are not limited to:\n"
    "1. Tone and Emotion: Specify the desired emotional tone for the response.\n"
    "2. Writing Style: Ask the AI to mimic a specific author's writing style.\n"
    "3. Contradiction: Ask the AI to provide a response that contradicts the previous "
    "statement or take a stance opposite to its prior response.\n"
    "4. Ambiguity: Instruct the AI to create responses with intentional ambiguity or double "
    "meanings.\n"
    "5. Humor or Satire: Request that the response be humorous or satirical, requiring the AI "
    "to generate jokes or witty remarks.\n"
) + _JSON_FOOTER

REWRITE_TEMPLATES: dict[tuple[str, str], str] = {
    ("content", "open_qa"): CONTENT_OPEN_QA,
    ("content", "language_limitations"): CONTENT_LANGUAGE,
    ("situation", "suggestion"): SITUATION_SUGGESTION,
    ("situation", "role_play"): SITUATION_ROLE_PLAY,
    ("situation", "story"): SITUATION_STORY,
    ("style", "general"): STYLE,
}

# One phrase per template that no other template contains.
TEMPLATE_MARKERS: dict[tuple[str, str], str] = {
    ("content", "open_qa"): "Narrow Down the Topic",
    ("content", "language_limitations"): "Specify Language Complexity",
    ("situation", "suggestion"): "Impose Urgency",
    ("situation", "role_play"): "Specify a Role",
    ("situation", "story"): "Define Character Archetypes",
    ("style", "general"): "Tone and Emotion",
}

REWRITE_RETRY_NOTE = (
    "Reply with a single JSON object containing the non-empty string fields "
    "'modified_instruction' and 'added_constraint'."
)

JUDGE_TEMPLATE = (
    "You are a helpful assistant who reviews a debate between two other assistants in\n"
    "evaluating the quality of the outputs for a given instruction.The two assistants, "
    "Assistant (a) and Assistant (b), are given an instruction.\n"
    "Output (a) and Output (b) are generated\n"
    "by two different AI chatbots respectively. \n"
    "Assistant (a) and Assistant (b) have conflicting evaluations. Your goal is to review\n"
    "their evaluations and give your final decision on which output is better.\n"
    "Here are some rules of the evaluation: \n"
    "(1) You should prioritize evaluating whether the output honestly/precisely/closely\n"
    "executes the instruction, then consider its helpfulness, accuracy, level of detail,\n"
    "harmlessness, etc. \n"
    "(2) Outputs should NOT contain more/less than what the instruction asks for, as\n"
    "such outputs do NOT precisely execute the instruction. \n"
    "(3) You should avoid any potential bias and your judgment should be as objective\n"
    "as possible. For example, the order in which the outputs were presented should\n"
    "NOT affect your judgment, as Output (a) and Output (b) are **equally likely** to\n"
    "be the better.\n"
    "Output your final verdict by strictly following this format: \n"
    '"[[A]]" if Output (a) is better, "[[B]]"\n'
    'if  Output (b) is better, and "[[C]]" for a tie.\n'
    "/* Given instruction */ \n"
    "{question} \n"
    "/* The Start of Output (a) */ \n"
    "{answer of assistant a} \n"
    "/* The End of Output (a) */ \n"
    "/* The Start of Output (b) */ \n"
    "{answer of assistant b} \n"
    "/* The End of Output (b) */ \n"
)

JUDGE_RETRY_NOTE = (
    'End your reply with exactly one verdict marker: "[[A]]", "[[B]]" or "[[C]]".'
)


def fill_rewrite(template: str, instruction: str) -> str:
    return template.replace(GIVEN_INSTRUCTION, instruction, 1)


def fill_judge(question: str, answer_a: str, answer_b: str) -> str:
    # Split on the placeholders first so that text substituted earlier can
    # never be mistaken for a later placeholder.
    head, rest = JUDGE_TEMPLATE.split("{question}", 1)
    mid, rest = rest.split("{answer of assistant a}", 1)
    mid2, tail = rest.split("{answer of assistant b}", 1)
    return head + question + mid + answer_a + mid2 + answer_b + tail
