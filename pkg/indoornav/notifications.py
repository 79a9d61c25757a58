from typing import Optional

from rich.console import Console
from rich.panel import Panel

console = Console(stderr=True)


class Notification:
    style = "bold blue"
    prefix = ""

    def __init__(self, message: str, title: Optional[str] = None) -> None:
        self.message = message
        self.title = title

    def render(self) -> Panel:
        return Panel(
            f"{self.prefix}{self.message}",
            title=self.title,
            title_align="left",
            border_style=self.style,
            expand=False,
        )

    def show(self, target: Optional[Console] = None) -> None:
        (target or console).print(self.render())


class SuccessNotification(Notification):
    style = "bold green"
    prefix = ":heavy_check_mark: "


class WarningNotification(Notification):
    style = "bold yellow"
    prefix = ":warning: "


class ErrorNotification(Notification):
    style = "bold red"
    prefix = ":x: "


def notify(message: str, title: Optional[str] = None) -> None:
    Notification(message, title).show()


def notify_success(message: str, title: Optional[str] = None) -> None:
    SuccessNotification(message, title).show()


def notify_warning(message: str, title: Optional[str] = None) -> None:
    WarningNotification(message, title).show()


def notify_error(message: str, title: Optional[str] = None) -> None:
    ErrorNotification(message, title).show()
