"""Pack five jobs into one node's resource bin and read off the layout.

A job asks for a rectangle of cores x minutes.  The bin is the node's
core count by the site's walltime limit.  Insertion order is queue
order; each rectangle lands at the position with the lowest top edge
(leftmost on ties), and the final submission request is the bounding
box of everything placed.
"""

from hpcbundle import PackingBin, ResourceRect, bounding_request, waste_fraction

JOBS = [
    ("A", 3, 40),
    ("B", 3, 30),
    ("C", 6, 30),
    ("D", 2, 20),
    ("E", 3, 25),
]


def main() -> None:
    bin_ = PackingBin(width=6, height=100)
    print(f"bin: {bin_.width} cores x {bin_.height} minutes\n")

    for name, cores, minutes in JOBS:
        placement = bin_.insert(ResourceRect(cores, minutes))
        print(f"  {name} ({cores}x{minutes:>2})  ->  x={placement.x} y={placement.y}")

    cores, minutes = bin_.bounding()
    print(f"\nsubmission request: {cores} cores x {minutes} minutes")
    print(f"waste fraction: {bin_.waste_fraction():.4f} "
          "(white space inside the bounding box)")

    print("\nlayout (time flows upward, 5 minutes per row):\n")
    print(bin_.render(row_minutes=5, labels=[name for name, _, _ in JOBS]))

    # The same helpers work on bare placement lists, without a bin.
    placements = [p for p in bin_.placements]
    assert bounding_request(placements) == (cores, minutes)
    assert waste_fraction(placements) == bin_.waste_fraction()

    print("\na 6x31 rectangle no longer fits anywhere:")
    print(" ", bin_.insert(ResourceRect(6, 31)))


if __name__ == "__main__":
    main()
