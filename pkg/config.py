import os
from pathlib import Path
from dotenv import load_dotenv

# Загрузка переменных окружения из .env файла
load_dotenv()

# Определение окружения
ENVIRONMENT = os.getenv("ENVIRONMENT", "development")
IS_PRODUCTION = ENVIRONMENT == "production"

APP_NAME = "flexhawkes"
APP_VERSION = "1.0.0"

# Базовые пути (всегда относительные от корня проекта)
BASE_DIR = Path(__file__).resolve().parent
LOGS_FOLDER = BASE_DIR / os.getenv("LOGS_FOLDER", "logs")
OUTPUT_FOLDER = BASE_DIR / os.getenv("OUTPUT_FOLDER", "output")

# Создание необходимых директорий
LOGS_FOLDER.mkdir(exist_ok=True)


def _optional_float(name: str):
    value = os.getenv(name, "").strip()
    return float(value) if value else None


# Численные настройки рекурсии
PHI_INV_TOL = float(os.getenv("PHI_INV_TOL", "1e-12"))
PHI_INV_MAX_ITER = int(os.getenv("PHI_INV_MAX_ITER", "200"))
SIM_CHUNK = int(os.getenv("SIM_CHUNK", "4096"))  # размер блока предварительно сгенерированных остатков
DEFAULT_LAMBDA0 = _optional_float("DEFAULT_LAMBDA0")  # None -> mu (текущая оценка)

# Оптимизатор Нелдера-Мида
OPT_XATOL = float(os.getenv("OPT_XATOL", "1e-8"))
OPT_FATOL = float(os.getenv("OPT_FATOL", "1e-10"))
OPT_MAXITER = int(os.getenv("OPT_MAXITER", "100000"))
OPT_MAX_RESTARTS = int(os.getenv("OPT_MAX_RESTARTS", "5"))
OPT_SIMPLEX_STEP = float(os.getenv("OPT_SIMPLEX_STEP", "0.1"))
OPT_PENALTY = float(os.getenv("OPT_PENALTY", "1e6"))  # штраф за выход из допустимой области

# Минимальные объемы выборки
MLE_MIN_EVENTS = int(os.getenv("MLE_MIN_EVENTS", "100"))
GMM_MIN_EVENTS = int(os.getenv("GMM_MIN_EVENTS", "1000"))

# Численные производные
JACOBIAN_REL_STEP = float(os.getenv("JACOBIAN_REL_STEP", "1e-5"))
HESSIAN_REL_STEP = float(os.getenv("HESSIAN_REL_STEP", "1e-4"))
GMM_RIDGE = float(os.getenv("GMM_RIDGE", "1e-8"))

# Гамма-ядро: допустимая отброшенная масса хвоста ядра
GAMMA_KERNEL_TAIL = float(os.getenv("GAMMA_KERNEL_TAIL", "1e-14"))

# Волатильность: centered | literal
VOL_INTERPRETATION = os.getenv("VOL_INTERPRETATION", "centered")

# Параллелизм
THREADS = int(os.getenv("THREADS", str(os.cpu_count() or 1)))

# Логирование
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_MAX_BYTES = 10 * 1024 * 1024  # 10MB
LOG_BACKUP_COUNT = 5

# Вывод конфигурации при запуске (для отладки)
if __name__ == "__main__":
    print(f"=== Конфигурация {APP_NAME} {APP_VERSION} ({ENVIRONMENT}) ===")
    print(f"BASE_DIR: {BASE_DIR}")
    print(f"LOGS_FOLDER: {LOGS_FOLDER}")
    print(f"OUTPUT_FOLDER: {OUTPUT_FOLDER}")
    print(f"PHI_INV: tol={PHI_INV_TOL}, max_iter={PHI_INV_MAX_ITER}")
    print(f"OPTIMIZER: xatol={OPT_XATOL}, fatol={OPT_FATOL}, maxiter={OPT_MAXITER}, restarts={OPT_MAX_RESTARTS}")
    print(f"VOL_INTERPRETATION: {VOL_INTERPRETATION}")
    print(f"THREADS: {THREADS}")
