// Thin socket wrapper: encodes client frames, decodes server frames, and
// hands parsed messages to one callback. Works with the browser WebSocket
// and anything else exposing the same listener surface.

import type { ActionName, ServerMessage, SessionConfig } from './protocol.js';
import {
  actionMessage,
  joinMessage,
  leaveMessage,
  parseServerMessage,
  syncMessage,
} from './protocol.js';

export interface SocketLike {
  send(data: string): void;
  close(): void;
  addEventListener(type: string, listener: (event: any) => void): void;
}

export interface SessionHandlers {
  onMessage(msg: ServerMessage): void;
  onOpen?(): void;
  onClose?(): void;
}

export class SessionSocket {
  constructor(private socket: SocketLike, handlers: SessionHandlers) {
    socket.addEventListener('open', () => handlers.onOpen?.());
    socket.addEventListener('close', () => handlers.onClose?.());
    socket.addEventListener('message', (event: { data: unknown }) => {
      const msg = parseServerMessage(String(event.data));
      if (msg) handlers.onMessage(msg);
    });
  }

  join(config: SessionConfig): void {
    this.socket.send(joinMessage(config));
  }

  action(action: ActionName, tick: number): void {
    this.socket.send(actionMessage(action, tick));
  }

  sync(): void {
    this.socket.send(syncMessage());
  }

  leave(): void {
    this.socket.send(leaveMessage());
  }

  close(): void {
    this.socket.close();
  }
}
