// Single state store behind the view. The client never predicts: what gets
// drawn is exactly the last state message the server broadcast.

import type {
  ErrorMessage,
  ResultMessage,
  ServerMessage,
  SessionConfig,
  StateMessage,
} from './protocol.js';
import type { LayoutInfo } from './layout.js';

export type ConnectionStatus = 'idle' | 'connecting' | 'open' | 'closed';

export class ClientState {
  status: ConnectionStatus = 'idle';
  config: SessionConfig | null = null;
  layout: LayoutInfo | null = null;
  last: StateMessage | null = null;
  result: ResultMessage | null = null;
  error: ErrorMessage | null = null;

  apply(msg: ServerMessage): void {
    if (msg.type === 'state') {
      this.last = msg;
      this.error = null;
    } else if (msg.type === 'result') {
      this.result = msg;
    } else {
      this.error = msg;
    }
  }

  get tick(): number {
    return this.last ? this.last.tick : 0;
  }

  get score(): number {
    return this.last ? this.last.score : 0;
  }

  get timeLeft(): number {
    return this.last ? this.last.time_left : 0;
  }

  reset(): void {
    this.last = null;
    this.result = null;
    this.error = null;
  }
}
