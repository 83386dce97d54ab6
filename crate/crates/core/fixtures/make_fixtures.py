"""Regenerates the synthetic corpora in this directory.

Documents are written as segment lists so span offsets (code points) are
computed, never typed by hand.
"""
import json
import random
from pathlib import Path

HERE = Path(__file__).parent


def doc(doc_id, *segments):
    text, spans = "", []
    for seg in segments:
        if isinstance(seg, str):
            text += seg
        else:
            surface, cat = seg
            spans.append({"start": len(text), "end": len(text) + len(surface), "category": cat})
            text += surface
    return {"id": doc_id, "text": text, "spans": spans}


def write(name, rows):
    with open(HERE / name, "w", encoding="utf-8") as f:
        for r in rows:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")


# -- classification -----------------------------------------------------------

CLASS6 = [
    ("c1", "LiFePO4 cathodes coated with carbon retain 95% capacity after 500 cycles in lithium-ion cells.", "battery"),
    ("c2", "A solid electrolyte based on Li7La3Zr2O12 suppresses dendrite growth in lithium metal batteries.", "battery"),
    ("c3", "Silicon anodes with a porous binder improve the cycle life of rechargeable batteries.", "battery"),
    ("c4", "Patients receiving cognitive behavioural therapy reported reduced anxiety after eight weeks.", "non-battery"),
    ("c5", "A randomized trial compared two antihypertensive drugs in elderly patients.", "non-battery"),
    ("c6", "Survey responses indicate that sleep quality predicts academic performance in adolescents.", "non-battery"),
]
write("classification_6.jsonl", [{"id": i, "text": t, "label": l} for i, t, l in CLASS6])

rng = random.Random(7)
BAT_SUBJ = ["LiCoO2 cathodes", "NMC811 particles", "graphite anodes", "sulfide solid electrolytes",
            "sodium-ion layered oxides", "silicon-carbon composites", "LiPF6 electrolytes", "zinc-air cells"]
BAT_PRED = ["show improved capacity retention", "deliver higher rate capability",
            "reduce interfacial resistance", "extend cycle life", "increase coulombic efficiency"]
BAT_TAIL = ["in lithium-ion batteries.", "during fast charging.", "at elevated temperature.",
            "in pouch cells.", "after 300 cycles."]
MED_SUBJ = ["Adolescents with insomnia", "Patients with chronic pain", "Older adults", "Nursing students",
            "Participants in the cohort", "Children with asthma", "Veterans with PTSD", "Pregnant women"]
MED_PRED = ["reported lower stress", "showed improved memory scores", "had fewer hospital visits",
            "described higher wellbeing", "reported better adherence"]
MED_TAIL = ["after the intervention.", "in a randomized trial.", "over twelve months.",
            "compared with controls.", "in a longitudinal survey."]
rows = []
for i in range(40):
    if i % 2 == 0:
        text = f"{rng.choice(BAT_SUBJ)} {rng.choice(BAT_PRED)} {rng.choice(BAT_TAIL)}"
        label = "battery"
    else:
        text = f"{rng.choice(MED_SUBJ)} {rng.choice(MED_PRED)} {rng.choice(MED_TAIL)}"
        label = "non-battery"
    rows.append({"id": f"p{i:02d}", "text": text, "label": label})
write("classification_40.jsonl", rows)

# -- NER: solid-state materials ------------------------------------------------

SOLID = [
    doc("s01", ("LiCoO₂", "MAT"), " and ", ("LiFePO₄", "MAT"), " are used as ",
        ("cathodes of secondary batteries", "APL"), "."),
    doc("s02", ("Thin-film", "DSC"), " ", ("TiO2", "MAT"), " was grown by ", ("atomic layer deposition", "SMT"),
        " and examined by ", ("X-ray diffraction", "CMT"), "."),
    doc("s03", "The ", ("band gap", "PRO"), " of ", ("anatase", "SPL"), " ", ("TiO2", "MAT"),
        " exceeds that of ", ("rutile", "SPL"), " ", ("TiO2", "MAT"), "."),
    doc("s04", ("Nanocrystalline", "DSC"), " ", ("ZnO", "MAT"), " and ", ("SnO2", "MAT"),
        " films serve as ", ("gas sensors", "APL"), "."),
    doc("s05", ("Sol-gel synthesis", "SMT"), " yields ", ("BaTiO3", "MAT"), " with high ",
        ("permittivity", "PRO"), " for ", ("capacitors", "APL"), "."),
    doc("s06", "We measured the ", ("conductivity", "PRO"), " of ", ("Li7La3Zr2O12", "MAT"), " by ",
        ("impedance spectroscopy", "CMT"), " at room temperature."),
    doc("s07", ("Cubic", "SPL"), " ", ("perovskite", "DSC"), " ", ("CsPbBr3", "MAT"), " shows strong ",
        ("photoluminescence", "PRO"), "."),
    doc("s08", ("Hydrothermal", "SMT"), " ", ("MoS2", "MAT"), " nanosheets act as ",
        ("hydrogen evolution catalysts", "APL"), "."),
    doc("s09", ("Graphene", "MAT"), " and ", ("h-BN", "MAT"), " heterostructures were imaged with ",
        ("transmission electron microscopy", "CMT"), "."),
    doc("s10", "The ", ("magnetization", "PRO"), " of ", ("Fe3O4", "MAT"), " nanoparticles increases after ",
        ("annealing", "SMT"), "."),
    doc("s11", ("Amorphous", "DSC"), " ", ("SiO2", "MAT"), " layers provide ", ("gate dielectrics", "APL"),
        " in ", ("MOSFETs", "APL"), "."),
    doc("s12", ("Wurtzite", "SPL"), " ", ("GaN", "MAT"), " and ", ("AlN", "MAT"), " are used in ",
        ("light-emitting diodes", "APL"), " and ", ("power electronics", "APL"), "."),
]
write("ner_solid_state.jsonl", SOLID)

# -- NER: gold nanoparticles (two DES and two MOR spans per document) ----------

AUNP_DES = ["citrate-capped", "PEG-coated", "thiolated", "CTAB-stabilized", "silica-coated", "bare",
            "polymer-coated", "DNA-functionalized", "monodisperse", "ultrasmall"]
AUNP_MOR = ["nanorods", "nanospheres", "nanostars", "nanocubes", "nanoshells", "nanocages",
            "nanoprisms", "nanowires", "nanoplates", "nanoclusters"]
AUNP = []
for i in range(10):
    d1, d2 = AUNP_DES[i], AUNP_DES[(i + 3) % 10]
    m1, m2 = AUNP_MOR[i], AUNP_MOR[(i + 5) % 10]
    AUNP.append(doc(f"a{i + 1:02d}", (d1[0].upper() + d1[1:], "DES"), " gold ", (m1, "MOR"),
                    " were converted into ", (d2, "DES"), " ", (m2, "MOR"), " under mild conditions."))
write("ner_aunp.jsonl", AUNP)

# -- QA ------------------------------------------------------------------------

QA = [
    {"id": "q01", "question": "What is the cathode material?",
     "context": "The cell used a LiFePO4 cathode and a graphite anode.", "answer": "LiFePO4"},
    {"id": "q02", "question": "What is the anode material?",
     "context": "The cell used a LiFePO4 cathode and a graphite anode.", "answer": "graphite"},
    # wrong annotation: the context never names an anode
    {"id": "q03", "question": "What is the anode material?",
     "context": "A nano-meshed cathode was combined with a polymer electrolyte to improve stability.",
     "answer": "nano-meshed"},
    {"id": "q04", "question": "What is the electrolyte?",
     "context": "A nano-meshed cathode was combined with a polymer electrolyte to improve stability.",
     "answer": "polymer electrolyte"},
    {"id": "q05", "question": "What is the cathode material?",
     "context": "Lithium-sulfur and lithium-air cells use a sulfur or air cathode.", "answer": "sulfur"},
    {"id": "q06", "question": "What is the separator?",
     "context": "A ceramic-coated polyethylene separator prevents short circuits.",
     "answer": "ceramic-coated polyethylene"},
    # exact duplicate of q01
    {"id": "q07", "question": "What is the cathode material?",
     "context": "The cell used a LiFePO4 cathode and a graphite anode.", "answer": "LiFePO4"},
    # answer absent from context
    {"id": "q08", "question": "What is the binder?",
     "context": "The electrode slurry was cast on copper foil.", "answer": "PVDF"},
    # NFC duplicate of q09 (decomposed vs composed é)
    {"id": "q09", "question": "What is the coating?",
     "context": "Particles were coated with an alumina layer (Al2O3, déposé by ALD).", "answer": "alumina"},
    {"id": "q10", "question": "What is the coating?",
     "context": "Particles were coated with an alumina layer (Al2O3, déposé by ALD).", "answer": "alumina"},
]
write("qa_small.jsonl", QA)

# 427 synthetic records in the battery-device QA shape
rng = random.Random(427)
ROLES = [("cathode", ["LiCoO2", "LiFePO4", "NMC622", "LiMn2O4", "sulfur"]),
         ("anode", ["graphite", "silicon", "lithium metal", "Li4Ti5O12", "hard carbon"]),
         ("electrolyte", ["LiPF6 in EC/DMC", "LLZO", "PEO", "Li6PS5Cl", "ionic liquid"])]
rows = []
for i in range(427):
    role, options = ROLES[i % 3]
    ans = rng.choice(options)
    other_role, other_opts = ROLES[(i + 1) % 3]
    ctx = f"Cell {i} combines a {ans} {role} with a {rng.choice(other_opts)} {other_role}."
    rows.append({"id": f"b{i:03d}", "question": f"What is the {role} material?", "context": ctx, "answer": ans})
write("qa_427.jsonl", rows)

# Hand-placed 4-d vectors (battery, medical, generic, noise) for the 6-doc set
# and every built-in label text, so zero-shot runs need no live embeddings.
EMB = {
    "battery": [1.0, 0.0, 0.2, 0.0],
    "non-battery": [0.3, 0.7, 0.2, 0.0],
    "battery materials": [1.0, 0.0, 0.3, 0.0],
    "diverse domains": [0.2, 0.5, 0.8, 0.0],
    "medical and psychological research": [0.0, 1.0, 0.2, 0.0],
    "papers related to battery energy materials": [0.9, 0.0, 0.4, 0.1],
    CLASS6[0][1]: [0.9, 0.1, 0.3, 0.1],
    CLASS6[1][1]: [0.8, 0.1, 0.4, 0.0],
    CLASS6[2][1]: [0.5, 0.1, 0.6, 0.2],
    CLASS6[3][1]: [0.1, 0.9, 0.3, 0.0],
    CLASS6[4][1]: [0.05, 0.8, 0.5, 0.1],
    CLASS6[5][1]: [0.1, 0.4, 0.9, 0.1],
}
write("classification_6_embeddings.jsonl", [{"text": t, "embedding": v} for t, v in EMB.items()])
