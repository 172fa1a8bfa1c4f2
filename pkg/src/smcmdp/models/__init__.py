"""Bundled case-study models and generators for their parameterised variants."""
from __future__ import annotations

import itertools
from pathlib import Path

MODELS_DIR = Path(__file__).resolve().parent


def list_models() -> list:
    return sorted(p.stem for p in MODELS_DIR.glob("*.mdp"))


def model_path(name: str) -> Path:
    path = MODELS_DIR / f"{name}.mdp"
    if not path.exists():
        raise FileNotFoundError(f"no bundled model '{name}'; available: {', '.join(list_models())}")
    return path


def ring_source(n: int, tokens: int) -> str:
    """Israeli-Jalfon self-stabilisation on ``n`` processes, the scheduler placing ``tokens`` tokens first."""
    if not 2 <= tokens <= n:
        raise ValueError("need 2 <= tokens <= n")
    layouts = [p for p in itertools.product([0, 1], repeat=n) if p[0] == 1 and sum(p) == tokens]
    lines = [f"// Israeli-Jalfon self-stabilisation on a ring of {n} processes.",
             "// A process holding a token passes it to its left or right neighbour with",
             "// probability 1/2; tokens that meet merge. The scheduler picks which",
             "// token-holding process moves. Stable once exactly one token remains.",
             f"// In the first step the scheduler also places the {tokens} initial tokens",
             "// (any layout with a token at process 1), so max and min range over",
             "// initial layouts as well as over moves.",
             "mdp", "", "module ring",
             "  ready : [0..1] init 0;"]
    lines += [f"  q{i} : [0..1] init 0;" for i in range(1, n + 1)]
    for p in layouts:
        ups = " & ".join(f"(q{i + 1}'=1)" for i in range(n) if p[i]) + " & (ready'=1)"
        lines.append(f"  [] ready=0 -> {ups};")
    for i in range(1, n + 1):
        left = n if i == 1 else i - 1
        right = 1 if i == n else i + 1
        lines.append(f"  [] ready=1 & q{i}=1 -> 0.5:(q{i}'=0) & (q{left}'=1) + 0.5:(q{i}'=0) & (q{right}'=1);")
    lines += ["endmodule", "",
              'label "stable" = ready=1 & ' + " + ".join(f"q{i}" for i in range(1, n + 1)) + " = 1;", "",
              'rewards "steps"', "  ready=1 : 1;", "endrewards"]
    return "\n".join(lines) + "\n"


def choice_source(tourists: int, bound: int) -> str:
    """Rabin's choice coordination for ``tourists`` tourists with counter levels up to ``bound``."""
    if tourists < 1 or bound < 1:
        raise ValueError("need at least one tourist and bound >= 1")
    lines = [f"// Rabin's choice coordination with {tourists} tourists and two places, L and R.",
             "// Every place has a noticeboard, every tourist a notepad; both hold a",
             "// number 2*level + bit. The pair 2j, 2j+1 are conjugates. All tourists",
             "// start at L with 0. When scheduled, a tourist reads the local board:",
             "//   board says here        -> the tourist stays (done)",
             "//   notepad > board        -> writes here on the board (done)",
             "//   otherwise              -> copies the board, flips a coin to move to",
             "//                             the next even number or its conjugate,",
             "//                             writes it on the board and walks over.",
             "// Levels saturate at BOUND. One round is one tourist action.",
             "mdp", "", f"const int BOUND = {bound};", "",
             "module boards",
             "  hl : [0..1] init 0;", "  hr : [0..1] init 0;",
             "  ll : [0..BOUND] init 0;", "  cl : [0..1] init 0;",
             "  lr : [0..BOUND] init 0;", "  cr : [0..1] init 0;"]
    for i in range(1, tourists + 1):
        for side, other, h, lv, cb in (("0", "1", "hl", "ll", "cl"), ("1", "0", "hr", "lr", "cr")):
            here = f"p{i}={side} & d{i}=0"
            mine = f"2*t{i}+c{i}"
            board = f"2*{lv}+{cb}"
            nxt = f"min({lv}+1, BOUND)"
            lines.append(f"  [] {here} & {h}=1 -> (d{i}'=1);")
            lines.append(f"  [] {here} & {h}=0 & {mine} > {board} -> ({h}'=1) & (d{i}'=1);")
            lines.append(f"  [] {here} & {h}=0 & {mine} <= {board} ->"
                         f" 0.5:(t{i}'={nxt}) & (c{i}'={cb}) & ({lv}'={nxt}) & (p{i}'={other})"
                         f" + 0.5:(t{i}'={nxt}) & (c{i}'=1-{cb}) & ({cb}'=1-{cb}) & ({lv}'={nxt}) & (p{i}'={other});")
        lines.append("")
    lines += ["  // tourist state: place p (0 = L), notepad level t and bit c, done flag d"]
    for i in range(1, tourists + 1):
        lines += [f"  p{i} : [0..1] init 0;", f"  t{i} : [0..BOUND] init 0;", f"  c{i} : [0..1] init 0;",
                  f"  d{i} : [0..1] init 0;"]
    lines += ["endmodule", "",
              'label "met" = ' + " & ".join(f"d{i}=1" for i in range(1, tourists + 1)) + ";", "",
              'rewards "rounds"', "  true : 1;", "endrewards"]
    return "\n".join(lines) + "\n"
