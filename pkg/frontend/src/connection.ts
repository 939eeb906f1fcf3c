/** Reconnecting WebSocket session: hello on open, snapshot resync after drops. */

import { encodeClientMessage, parseServerMessage, type ClientMessage, type ServerMessage } from "./protocol";

export type ConnectionStatus = "connecting" | "open" | "closed";

const WS_OPEN = 1; // WebSocket.OPEN, without relying on the global being present

export interface ConnectionOptions {
  url: string;
  participant: string;
  kind: "human" | "host";
  session?: string;
  onMessage: (msg: ServerMessage) => void;
  onStatus?: (status: ConnectionStatus) => void;
  onSchemaError?: (detail: string) => void;
  /** Injectable for tests. */
  socketFactory?: (url: string) => WebSocket;
  maxBackoffMs?: number;
}

export class Connection {
  private ws: WebSocket | null = null;
  private backoff = 500;
  private closedByUser = false;
  private rejoinRoom: string | null = null;

  constructor(private readonly opts: ConnectionOptions) {}

  connect(): void {
    this.closedByUser = false;
    const factory = this.opts.socketFactory ?? ((url: string) => new WebSocket(url));
    this.opts.onStatus?.("connecting");
    this.ws = factory(this.opts.url);
    this.ws.addEventListener("open", () => {
      this.backoff = 500;
      this.opts.onStatus?.("open");
      this.send({
        type: "client_hello",
        participant: this.opts.participant,
        kind: this.opts.kind,
        ...(this.opts.session ? { session: this.opts.session } : {}),
      });
      // After a drop, walk back into the room we were in; the server answers
      // with a fresh snapshot either way.
      if (this.rejoinRoom && this.rejoinRoom !== "lobby") {
        this.send({ type: "join_room", room: this.rejoinRoom });
      }
    });
    this.ws.addEventListener("message", (event: MessageEvent) => {
      let msg: ServerMessage;
      try {
        msg = parseServerMessage(String(event.data));
      } catch (err) {
        this.opts.onSchemaError?.(err instanceof Error ? err.message : String(err));
        return;
      }
      if (msg.type === "state_snapshot") {
        this.rejoinRoom = msg.room.id;
      }
      this.opts.onMessage(msg);
    });
    this.ws.addEventListener("close", () => {
      this.opts.onStatus?.("closed");
      if (this.closedByUser) return;
      const wait = this.backoff;
      this.backoff = Math.min(this.backoff * 2, this.opts.maxBackoffMs ?? 15_000);
      setTimeout(() => this.connect(), wait);
    });
  }

  send(msg: ClientMessage): boolean {
    if (!this.ws || this.ws.readyState !== WS_OPEN) return false;
    this.ws.send(encodeClientMessage(msg));
    return true;
  }

  close(): void {
    this.closedByUser = true;
    this.ws?.close();
  }
}
