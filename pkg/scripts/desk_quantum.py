"""Engine vs split-operator oracle on the two desk-scale scenarios.

Takes about a minute per scenario with the shipped grid settings.
"""
from aiphase.acceptance import desk_tables


def main():
    for name, (full, table) in desk_tables().items():
        print(f"== {name}")
        print(f"   phi0 {full.phi0:.10g}  classical {full.phi1_classical:.6g}  "
              f"wave packet {full.phi1_wavepacket:.6g}  second order {full.phi2:.6g}  "
              f"contrast {full.contrast:.10g}")
        print(table.format())


if __name__ == "__main__":
    main()
