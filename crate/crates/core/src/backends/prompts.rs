use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Challenger,
    Solver,
}

pub const SOLVER_SYSTEM: &str =
    "Please reason step by step, and put your final answer within \\boxed{}.";

pub const CHALLENGER_SYSTEM: &str = "You are an expert competition-math problem setter. \
FIRST, in your private scratch-pad, think step-by-step to design a brand-new, non-trivial problem. \
The problem could come from any field of mathematics, including but not limited to algebra, geometry, \
number theory, combinatorics, prealgebra, probability, statistics, and calculus. \
Aim for a difficulty such that fewer than 30% of advanced high-school students could solve it. \
Avoid re-using textbook clichés or famous contest problems.\n\
THEN, without revealing any of your private thoughts, output **exactly** the following two blocks:\n\
\n\
<question>\n\
{The full problem statement on one or more lines}\n\
</question>\n\
\n\
\\boxed{final_answer}\n\
\n\
Do NOT output anything else—no explanations, no extra markup.";

pub const CHALLENGER_USER: &str =
    "Generate one new, challenging reasoning question now. Remember to format the output exactly as instructed.";

/// Returns `(system, user)` messages for `role`. The solver's user message
/// is the problem statement verbatim.
pub fn render_prompts(role: Role, problem: Option<&str>) -> Result<(String, String)> {
    match (role, problem) {
        (Role::Challenger, None) => Ok((CHALLENGER_SYSTEM.into(), CHALLENGER_USER.into())),
        (Role::Challenger, Some(_)) => Err(Error::invalid("the challenger prompt takes no problem")),
        (Role::Solver, Some(p)) if !p.trim().is_empty() => Ok((SOLVER_SYSTEM.into(), p.into())),
        (Role::Solver, _) => Err(Error::invalid("the solver prompt needs a non-empty problem")),
    }
}
