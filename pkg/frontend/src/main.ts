/** Client entry point: wire the connection, snapshot state, and the composer. */

import { playPing } from "./audio";
import { Connection, type ConnectionStatus } from "./connection";
import type { ServerMessage, StateSnapshot } from "./protocol";
import { buildViewModel, render } from "./view";

const params = new URLSearchParams(location.search);
const participant = params.get("participant") ?? `guest-${Math.floor(Math.random() * 1000)}`;
const kind = params.get("kind") === "host" ? "host" : "human";
const session = params.get("session") ?? undefined;
const serverUrl = params.get("server") ?? `ws://${location.hostname}:8750`;

const root = document.getElementById("room")!;
const statusEl = document.getElementById("status")!;
const composer = document.getElementById("composer") as HTMLFormElement;
const input = document.getElementById("utterance") as HTMLInputElement;
const joinMain = document.getElementById("join-main") as HTMLButtonElement;

let lastSnapshot: StateSnapshot | null = null;
let banner: string | null = null;
let bannerTimer: number | undefined;

function redraw(): void {
  if (!lastSnapshot) return;
  render(root, buildViewModel(lastSnapshot, banner), {
    onControl: (cmd) => connection.send({ type: "mode_command", cmd }),
  });
}

function flashBanner(text: string): void {
  banner = text;
  redraw();
  clearTimeout(bannerTimer);
  bannerTimer = window.setTimeout(() => {
    banner = null;
    redraw();
  }, 6000);
}

function onMessage(msg: ServerMessage): void {
  switch (msg.type) {
    case "state_snapshot":
      lastSnapshot = msg;
      redraw();
      break;
    case "agent_speech":
      if (lastSnapshot) {
        lastSnapshot.transcriptTail = [
          ...lastSnapshot.transcriptTail.slice(-7),
          {
            seq: 0,
            speaker: { id: lastSnapshot.agentName, kind: "agent" },
            room: lastSnapshot.room,
            text: msg.text,
            startedAt: msg.t,
            endedAt: msg.t,
            origin: "reactive",
          },
        ];
        redraw();
      }
      break;
    case "hand_raised":
      if (lastSnapshot) {
        lastSnapshot.handRaised = true;
        redraw();
      }
      if (msg.ping) playPing();
      break;
    case "hand_lowered":
      if (lastSnapshot) {
        lastSnapshot.handRaised = false;
        redraw();
      }
      break;
    case "call_back_request":
      flashBanner(`${msg.from.id} asks you to come back to the main room`);
      break;
    case "error":
      flashBanner(`${msg.code}: ${msg.detail}`);
      break;
    default:
      break;
  }
}

const connection = new Connection({
  url: serverUrl,
  participant,
  kind,
  session,
  onMessage,
  onStatus: (status: ConnectionStatus) => {
    statusEl.textContent = status === "open" ? `connected as ${participant}` : status;
    statusEl.className = `status status-${status}`;
  },
  onSchemaError: (detail) => flashBanner(`protocol error: ${detail}`),
});
connection.connect();

composer.addEventListener("submit", (event) => {
  event.preventDefault();
  const text = input.value.trim();
  if (!text) return; // empty utterances are rejected client-side
  connection.send({ type: "utterance", text });
  input.value = "";
});

joinMain.addEventListener("click", () => connection.send({ type: "join_room", room: "main" }));
