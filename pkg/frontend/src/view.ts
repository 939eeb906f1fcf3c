/** Pure view-model construction and DOM rendering for a room snapshot.
 *
 * render() is idempotent: identical snapshots produce identical DOM. The
 * control buttons rendered are exactly the snapshot's myControls, so a
 * NotPermitted error is unreachable through the UI.
 */

import type { StateSnapshot, UserControl } from "./protocol";

export interface Seat {
  id: string;
  label: string;
  kind: "human" | "agent";
  ring: "table" | "outer";
  sizeClass: "regular" | "small";
  handRaised: boolean;
}

export interface ViewModel {
  roomLabel: string;
  modeLabel: string;
  seats: Seat[];
  showAgent: boolean;
  controls: UserControl[];
  transcript: { speaker: string; text: string }[];
  banner: string | null;
}

const CONTROL_LABELS: Record<UserControl, string> = {
  invite_agent: "Invite agent",
  remove_agent: "Remove agent",
  enter_breakout: "Enter breakout",
  return_main: "Return to main",
  call_back_partner: "Call partner back",
};

export function buildViewModel(snapshot: StateSnapshot, banner: string | null = null): ViewModel {
  const seats: Seat[] = snapshot.occupants
    .filter((p) => p.kind === "human")
    .map((p) => ({
      id: p.id,
      label: p.id,
      kind: "human" as const,
      ring: "table" as const,
      sizeClass: "regular" as const,
      handRaised: false,
    }));
  const location = snapshot.agentLocation;
  const showAgent = location === "at_table" || location === "outer_circle" || location === "in_breakout";
  if (showAgent) {
    seats.push({
      id: "__agent__",
      label: snapshot.agentName,
      kind: "agent",
      // Outer-circle placement renders the agent smaller and off the table.
      ring: location === "outer_circle" ? "outer" : "table",
      sizeClass: location === "outer_circle" ? "small" : "regular",
      handRaised: snapshot.handRaised,
    });
  }
  return {
    roomLabel: snapshot.room.kind === "breakout" ? `breakout (${snapshot.room.owner?.id ?? "?"})` : snapshot.room.id,
    modeLabel: snapshot.mode ?? "lobby",
    seats,
    showAgent,
    controls: [...snapshot.myControls],
    transcript: snapshot.transcriptTail.map((t) => ({ speaker: t.speaker.id, text: t.text })),
    banner,
  };
}

export interface RenderCallbacks {
  onControl: (cmd: UserControl) => void;
}

export function render(root: HTMLElement, vm: ViewModel, callbacks: RenderCallbacks): void {
  root.textContent = "";

  const header = el("div", "room-header");
  header.append(el("span", "room-name", vm.roomLabel), el("span", "room-mode", vm.modeLabel));
  root.append(header);

  if (vm.banner) {
    const banner = el("div", "banner", vm.banner);
    banner.setAttribute("role", "alert");
    root.append(banner);
  }

  const table = el("div", "table");
  for (const seat of vm.seats) {
    const seatEl = el("div", `seat seat-${seat.kind} ring-${seat.ring} size-${seat.sizeClass}`);
    seatEl.dataset.participant = seat.id;
    const avatar = el("div", "avatar", seat.kind === "agent" ? "\u{1F916}" : "\u{1F464}");
    seatEl.append(avatar, el("div", "seat-label", seat.label));
    if (seat.handRaised) {
      const hand = el("div", "hand-icon", "✋");
      hand.dataset.testid = "hand-icon";
      seatEl.append(hand);
    }
    table.append(seatEl);
  }
  root.append(table);

  const controls = el("div", "controls");
  for (const cmd of vm.controls) {
    const button = document.createElement("button");
    button.className = `control control-${cmd}`;
    button.textContent = CONTROL_LABELS[cmd];
    button.dataset.cmd = cmd;
    button.addEventListener("click", () => callbacks.onControl(cmd));
    controls.append(button);
  }
  root.append(controls);

  const transcript = el("div", "transcript");
  for (const line of vm.transcript) {
    const row = el("div", "turn");
    row.append(el("span", "turn-speaker", line.speaker + ":"), el("span", "turn-text", " " + line.text));
    transcript.append(row);
  }
  root.append(transcript);
}

function el(tag: string, className: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}
