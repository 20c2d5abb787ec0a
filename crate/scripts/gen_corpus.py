#!/usr/bin/env python3
"""Regenerate the bundled desk-scale corpora under crates/core/data.

general/  200 short everyday paragraphs
domain/   151 technical segments about a fictional ARC600 wireless gateway
qa.jsonl  question / reference pairs answerable from domain/

Output is deterministic for a given seed.
"""

import argparse
import json
import random
import shutil
from pathlib import Path

SUBJECTS = [
    ("the river", "flows past the old mill", "fishermen wait on the bank at dawn"),
    ("the library", "opens early on weekdays", "students fill the long tables by noon"),
    ("the bakery", "sells bread before sunrise", "the smell of rye drifts down the street"),
    ("the orchard", "blooms in late spring", "bees move from tree to tree all afternoon"),
    ("the harbor", "is busy in summer", "small boats carry visitors to the islands"),
    ("the market", "sets up every Saturday", "farmers bring apples, cheese and honey"),
    ("the mountain trail", "climbs through pine forest", "hikers stop at the lake to rest"),
    ("the village school", "has one large classroom", "children walk there along the canal"),
    ("the train station", "was rebuilt last year", "commuters read newspapers on the platform"),
    ("the garden", "needs water every evening", "tomatoes and beans grow along the fence"),
    ("the museum", "keeps a collection of clocks", "guides explain how each one was repaired"),
    ("the lighthouse", "stands on a rocky point", "its lamp turns slowly through the night"),
]
WEATHER = ["rain", "fog", "snow", "a warm wind", "bright sunshine", "a sudden storm"]
PEOPLE = ["my neighbor", "an old friend", "the teacher", "a young painter", "the shopkeeper", "my cousin"]
FEELINGS = ["quiet", "cheerful", "busy", "calm", "crowded", "peaceful"]
TIMES = ["In the morning", "Late in the evening", "On Sundays", "During the holidays", "Most afternoons", "In autumn"]


def general_paragraph(rng: random.Random) -> str:
    place, fact, scene = rng.choice(SUBJECTS)
    other = rng.choice(SUBJECTS)[0]
    s = [
        f"{rng.choice(TIMES)} {place} {fact}.",
        f"When {rng.choice(WEATHER)} arrives, {scene}.",
        f"{rng.choice(PEOPLE).capitalize()} says the town feels {rng.choice(FEELINGS)} near {other}.",
    ]
    if rng.random() < 0.6:
        s.append(f"People often walk from {place} to {other} and back before dinner.")
    if rng.random() < 0.4:
        s.append(f"Nobody remembers when {place} was first built, but everyone has a story about it.")
    return " ".join(s)


# Fictional product facts. Each entry is (topic, sentences); the QA set asks
# about a subset of them.
FACTS = {
    "overview": [
        "ARC600 is a compact wireless gateway for remote monitoring of distribution substations.",
        "The ARC600 gateway connects field devices to a control center over a cellular network.",
        "ARC600 collects alarms, measurements and switch positions from connected equipment.",
    ],
    "power": [
        "The ARC600 gateway runs from a 24 V DC supply.",
        "A backup battery keeps the gateway running for up to eight hours during a power cut.",
        "Typical power consumption of the gateway is below 5 W.",
    ],
    "interfaces": [
        "The gateway provides two Ethernet ports and one RS-485 serial port.",
        "Eight digital inputs report switch positions and door contacts.",
        "Four relay outputs can operate disconnectors from the control center.",
    ],
    "radio": [
        "The built-in modem supports 4G LTE with fallback to 3G.",
        "An external antenna connector is provided for sites with weak signal.",
        "Signal strength is shown on the front panel as a bar of four LEDs.",
    ],
    "protocols": [
        "The gateway speaks the IEC 60870-5-104 protocol towards the control center.",
        "Modbus RTU is used to read values from serial field devices.",
        "All traffic to the control center is carried inside an encrypted VPN tunnel.",
    ],
    "configuration": [
        "Configuration is done through the built-in web interface.",
        "The default address of the web interface is 192.168.0.10.",
        "Settings can be exported to a file and loaded onto another gateway.",
    ],
    "installation": [
        "The gateway is mounted on a standard DIN rail inside the cabinet.",
        "The operating temperature range is from minus 25 to plus 60 degrees Celsius.",
        "The enclosure is rated IP20 and must be installed in a closed cabinet.",
    ],
    "alarms": [
        "When a digital input changes state the gateway sends an event with a time stamp.",
        "Time stamps are synchronized from the control center or from an NTP server.",
        "Events are buffered in memory if the connection is lost and sent when it returns.",
    ],
    "maintenance": [
        "Firmware updates are uploaded through the web interface.",
        "The status LED blinks green during normal operation and red on a fault.",
        "Pressing the reset button for ten seconds restores the factory settings.",
    ],
}

LEADS = [
    "This section describes {t}.",
    "Refer to the following notes on {t}.",
    "The points below summarize {t}.",
    "Technical note on {t}.",
    "Field engineers should be familiar with {t}.",
]
TAILS = [
    "Check the wiring diagram before energizing the cabinet.",
    "Record every change in the site maintenance log.",
    "Contact the service desk if the behavior differs from this description.",
    "Use only shielded cables for the serial connection.",
    "The same rules apply to every gateway in the network.",
]
TOPIC_NAMES = {
    "overview": "the ARC600 gateway",
    "power": "the power supply",
    "interfaces": "the device interfaces",
    "radio": "the radio modem",
    "protocols": "the communication protocols",
    "configuration": "device configuration",
    "installation": "installation requirements",
    "alarms": "alarm and event handling",
    "maintenance": "maintenance tasks",
}

QA = [
    ("What is ARC600?", FACTS["overview"][0]),
    ("How does the ARC600 gateway connect to the control center?", FACTS["overview"][1]),
    ("What supply voltage does the gateway need?", FACTS["power"][0]),
    ("How long does the backup battery last?", FACTS["power"][1]),
    ("What is the power consumption of the gateway?", FACTS["power"][2]),
    ("Which ports does the gateway provide?", FACTS["interfaces"][0]),
    ("What do the digital inputs report?", FACTS["interfaces"][1]),
    ("What can the relay outputs operate?", FACTS["interfaces"][2]),
    ("Which cellular networks does the modem support?", FACTS["radio"][0]),
    ("What helps at sites with weak signal?", FACTS["radio"][1]),
    ("Which protocol is used towards the control center?", FACTS["protocols"][0]),
    ("How are serial field devices read?", FACTS["protocols"][1]),
    ("How is traffic to the control center protected?", FACTS["protocols"][2]),
    ("How is the gateway configured?", FACTS["configuration"][0]),
    ("What is the default address of the web interface?", FACTS["configuration"][1]),
    ("How is the gateway mounted?", FACTS["installation"][0]),
    ("What is the operating temperature range?", FACTS["installation"][1]),
    ("How do I restore the factory settings?", FACTS["maintenance"][2]),
]


def domain_segment(rng: random.Random, i: int) -> str:
    topics = list(FACTS)
    topic = topics[i % len(topics)]
    facts = FACTS[topic][:]
    rng.shuffle(facts)
    k = rng.randint(2, len(facts))
    parts = [rng.choice(LEADS).format(t=TOPIC_NAMES[topic])] + facts[:k]
    if rng.random() < 0.5:
        extra = rng.choice(topics)
        parts.append(rng.choice(FACTS[extra]))
    parts.append(rng.choice(TAILS))
    return " ".join(parts)


def write_dir(path: Path, texts):
    if path.exists():
        shutil.rmtree(path)
    path.mkdir(parents=True)
    for i, t in enumerate(texts):
        (path / f"{i:04d}.txt").write_text(t + "\n", encoding="utf-8")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "crates/core/data")
    ap.add_argument("--seed", type=int, default=600)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    write_dir(args.out / "general", [general_paragraph(rng) for _ in range(200)])
    write_dir(args.out / "domain", [domain_segment(rng, i) for i in range(151)])
    with open(args.out / "qa.jsonl", "w", encoding="utf-8") as f:
        for q, a in QA:
            f.write(json.dumps({"question": q, "reference_answer": a}) + "\n")


if __name__ == "__main__":
    main()
