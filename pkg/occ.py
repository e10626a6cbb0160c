"""
occ 启动脚本。

用法:
    python occ.py css --config configs/pollution_css.cfg
    python occ.py path --config configs/pollution_path.cfg path.v0=0.4,0.4
"""
import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
