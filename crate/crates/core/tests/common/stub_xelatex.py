#!/usr/bin/env python3
# Stand-in for xelatex: checks brace balance, honours a few trigger macros and
# writes a fake single-page "PDF" carrying the page size and body text.
import os
import re
import sys
import time

args = sys.argv[1:]
if "--version" in args:
    print("stub-xelatex 1.0")
    sys.exit(0)
outdir = "."
tex = None
for a in args:
    if a.startswith("-output-directory="):
        outdir = a.split("=", 1)[1]
    elif not a.startswith("-"):
        tex = a
src = open(tex, encoding="utf-8").read()
stem = os.path.splitext(os.path.basename(tex))[0]
log_path = os.path.join(outdir, stem + ".log")
body = src.split("\\begin{document}\n", 1)[1].rsplit("\n\\end{document}", 1)[0]


def fail(msg):
    with open(log_path, "w", encoding="utf-8") as f:
        f.write("This is stub XeTeX\n! " + msg + "\nl.1 " + body[:40] + "\n")
    sys.exit(1)


if "\\FORCEHANG" in body:
    time.sleep(60)
if "\\FORCEFAIL" in body:
    fail("Undefined control sequence.")
plain = body.replace("\\\\", "").replace("\\{", "").replace("\\}", "")
depth = 0
for ch in plain:
    depth += {"{": 1, "}": -1}.get(ch, 0)
    if depth < 0:
        fail("Too many }'s.")
if depth != 0:
    fail("Missing } inserted.")
pages = 2 if "\\FORCEPAGES" in body else 1
m = re.search(r"paperwidth=([0-9.]+)in,paperheight=([0-9.]+)in", src)
w, h = m.group(1), m.group(2)
with open(os.path.join(outdir, stem + ".pdf"), "w", encoding="utf-8") as f:
    f.write("%PDF-stub\n" + w + " " + h + "\n" + body)
with open(log_path, "w", encoding="utf-8") as f:
    f.write("This is stub XeTeX\nOutput written on %s.pdf (%d page%s, 100 bytes).\n"
            % (stem, pages, "" if pages == 1 else "s"))
