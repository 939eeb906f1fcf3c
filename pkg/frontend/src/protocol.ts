/** Wire protocol types and parsing. One JSON document per WebSocket frame. */

export type ParticipantKind = "human" | "agent" | "host";

export interface ParticipantRef {
  id: string;
  kind: ParticipantKind;
}

export interface RoomRef {
  id: string;
  kind: "lobby" | "training" | "main" | "breakout";
  owner?: ParticipantRef;
}

export interface TurnRecord {
  seq: number;
  speaker: ParticipantRef;
  room: RoomRef;
  text: string;
  startedAt: number;
  endedAt: number;
  origin: "reactive" | "proactive" | "human_speech";
}

export type AgentLocation = "at_table" | "outer_circle" | "absent" | "in_breakout";

export type UserControl =
  | "invite_agent"
  | "remove_agent"
  | "enter_breakout"
  | "return_main"
  | "call_back_partner";

export interface StateSnapshot {
  type: "state_snapshot";
  session: string;
  room: RoomRef;
  mode: "roundtable" | "peripheral" | "breakout" | null;
  agentLocation: AgentLocation | null;
  handRaised: boolean;
  myControls: UserControl[];
  occupants: ParticipantRef[];
  transcriptTail: TurnRecord[];
  agentName: string;
  t: number;
}

export interface AgentSpeech {
  type: "agent_speech";
  text: string;
  t: number;
}

export interface HandRaised {
  type: "hand_raised";
  ping: boolean;
  t: number;
}

export interface HandLowered {
  type: "hand_lowered";
  t: number;
}

export interface CallBackRequest {
  type: "call_back_request";
  from: ParticipantRef;
  t: number;
}

export interface ErrorMessage {
  type: "error";
  code: string;
  detail: string;
}

export interface Ack {
  type: "session_created" | "moved" | "mode_set" | "persisted";
  [key: string]: unknown;
}

export type ServerMessage =
  | StateSnapshot
  | AgentSpeech
  | HandRaised
  | HandLowered
  | CallBackRequest
  | ErrorMessage
  | Ack;

const SERVER_TYPES = new Set([
  "state_snapshot",
  "agent_speech",
  "hand_raised",
  "hand_lowered",
  "call_back_request",
  "error",
  "session_created",
  "moved",
  "mode_set",
  "persisted",
]);

export class SchemaError extends Error {}

/** Parse a frame; throws SchemaError on anything we cannot render safely. */
export function parseServerMessage(raw: string): ServerMessage {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    throw new SchemaError("frame is not JSON");
  }
  if (typeof data !== "object" || data === null || typeof (data as any).type !== "string") {
    throw new SchemaError("frame has no type");
  }
  const msg = data as any;
  if (!SERVER_TYPES.has(msg.type)) {
    throw new SchemaError(`unknown message type ${msg.type}`);
  }
  if (msg.type === "state_snapshot") {
    if (typeof msg.room !== "object" || msg.room === null || typeof msg.room.id !== "string") {
      throw new SchemaError("snapshot without a room");
    }
    if (!Array.isArray(msg.myControls) || !Array.isArray(msg.occupants)) {
      throw new SchemaError("snapshot missing controls or occupants");
    }
    msg.transcriptTail = Array.isArray(msg.transcriptTail) ? msg.transcriptTail : [];
    msg.handRaised = Boolean(msg.handRaised);
  }
  return msg as ServerMessage;
}

export type ClientMessage =
  | { type: "client_hello"; participant: string; kind: ParticipantKind; session?: string }
  | { type: "join_room"; room: string }
  | { type: "host_move"; participant: string; room: string }
  | { type: "set_mode"; room: string; mode: string }
  | { type: "utterance"; text: string; startedAt?: number; endedAt?: number }
  | { type: "speech_start" }
  | { type: "speech_end"; text: string }
  | { type: "mode_command"; cmd: UserControl; target?: string }
  | { type: "persist" };

export function encodeClientMessage(msg: ClientMessage): string {
  return JSON.stringify(msg);
}
