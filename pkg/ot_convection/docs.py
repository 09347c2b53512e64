from typing import List

from ot_convection.forms import FORMS


def configdocs() -> List[str]:
    """ One block per subcommand: every config key with its default (or "required") and help text. """
    blocks = []
    for subcommand, form in FORMS.items():
        lines = [f"[{subcommand}]"]
        for name, field in form.base_fields.items():
            if field.required:
                default = "(required)"
            elif field.initial is None:
                default = "(unset)"
            else:
                default = f"= {field.initial}"
            lines.append(f"  {name} {default}")
            lines.append(f"      {field.help_text}")
        blocks.append("\n".join(lines))
    return blocks
