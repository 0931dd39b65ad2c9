"""Regenerate the bundled machine file (degree 2, three refinement passes)."""
from igamachine.geometry import validate_model
from igamachine.machine import BUNDLED, build_pmsm, save_model


def main():
    model = build_pmsm(degree=2, refine=3)
    problems = validate_model(model)
    if problems:
        raise SystemExit("\n".join(problems))
    save_model(model, BUNDLED)
    print(f"wrote {BUNDLED} ({len(model.patches)} patches)")


if __name__ == "__main__":
    main()
