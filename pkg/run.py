#!/usr/bin/env python3
"""
Скрипт запуска SAWT — Small-Area Weighting Toolkit
"""

import sys
from pathlib import Path

# Добавляем путь к модулям
sys.path.insert(0, str(Path(__file__).parent / "src" / "python"))

try:
    from main import main
except ImportError as e:
    print(f"Ошибка импорта: {e}", file=sys.stderr)
    print("Убедитесь, что установлены все зависимости:", file=sys.stderr)
    print("pip install -r requirements.txt", file=sys.stderr)
    sys.exit(1)

sys.exit(main())
