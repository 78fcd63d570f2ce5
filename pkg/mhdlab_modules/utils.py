import os
import datetime
from . import config

try:
    from rich.console import Console
    from rich.markup import escape
    RICH_AVAILABLE = True
except ImportError:
    RICH_AVAILABLE = False

# --- ANSI COLOURS ---
class Color:
    HEADER = '\033[95m'
    BLUE = '\033[94m'
    GREEN = '\033[92m'
    WARNING = '\033[93m'
    FAIL = '\033[91m'
    ENDC = '\033[0m'
    BOLD = '\033[1m'

# --- GLOBAL CONSOLE (to be initialized by the entry script) ---
console = None

# Active log file; None keeps library calls silent.
LOG_FILE = None


def set_log_file(path):
    global LOG_FILE
    LOG_FILE = path
    return path


def log_action(action, details):
    if not LOG_FILE:
        return
    try:
        log_dir = os.path.dirname(LOG_FILE)
        if log_dir and not os.path.exists(log_dir):
            os.makedirs(log_dir, exist_ok=True)
        timestamp = datetime.datetime.now().strftime("%Y-%m-%d %H:%M:%S")
        entry = f"{timestamp} | {action} | {details}\n"
        with open(LOG_FILE, 'a') as f:
            f.write(entry)
    except Exception:
        pass


def thread_cap():
    raw = os.environ.get(config.THREADS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        value = int(raw)
        if value < 1:
            raise ValueError(raw)
        return value
    except ValueError:
        log_action("WARNING", f"{config.THREADS_ENV}={raw!r} is not a positive integer, using 1 worker")
        return 1


def _atomic(filepath, content, mode):
    temp_file = f"{filepath}.tmp"
    try:
        parent = os.path.dirname(filepath)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(temp_file, mode) as f:
            f.write(content)
            f.flush()
            os.fsync(f.fileno())
        os.replace(temp_file, filepath)
        return True
    except Exception as e:
        print(f"{Color.FAIL}[!] Failed to write {filepath}: {e}{Color.ENDC}")
        log_action("ERROR", f"Atomic write failed for {filepath}: {e}")
        if os.path.exists(temp_file):
            os.remove(temp_file)
        return False


def atomic_write(filepath, content):
    return _atomic(filepath, content, 'w')


def atomic_write_bytes(filepath, payload):
    return _atomic(filepath, payload, 'wb')


def say(message, level='info'):
    """Print a status line through the rich console or plain ANSI colours."""
    marks = {
        'info': ('[i]', Color.BLUE, 'bold cyan'),
        'ok': ('[+]', Color.GREEN, 'bold green'),
        'warn': ('[!]', Color.WARNING, 'bold yellow'),
        'fail': ('[!]', Color.FAIL, 'bold red'),
        'work': ('[*]', Color.WARNING, 'bold yellow'),
    }
    mark, ansi, style = marks.get(level, marks['info'])
    if RICH_AVAILABLE and console:
        console.print(f"[{style}]{escape(mark)}[/{style}] {escape(message)}", highlight=False)
    else:
        print(f"{ansi}{mark} {message}{Color.ENDC}")
