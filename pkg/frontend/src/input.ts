// Keyboard capture with the server's rate rule mirrored client-side: at
// most one action message per tick, and when several keys land within one
// tick the latest press is the one that goes out.

import type { ActionName } from './protocol.js';

export const KEY_ACTIONS: Record<string, ActionName> = {
  ArrowUp: 'up',
  ArrowDown: 'down',
  ArrowLeft: 'left',
  ArrowRight: 'right',
  ' ': 'interact',
};

export class ActionGate {
  private pending: ActionName | null = null;

  constructor(private send: (action: ActionName, tick: number) => void) {}

  // Presses overwrite a single slot; nothing is sent until the tick turns.
  press(action: ActionName): void {
    this.pending = action;
  }

  // Called once per state broadcast: flush the buffered press, if any.
  tick(tick: number): void {
    if (this.pending !== null) {
      this.send(this.pending, tick);
      this.pending = null;
    }
  }

  clear(): void {
    this.pending = null;
  }
}

export class InputHandler {
  constructor(private gate: ActionGate, private target: Document) {
    target.addEventListener('keydown', this.onKeyDown);
  }

  private onKeyDown = (e: KeyboardEvent): void => {
    const action = KEY_ACTIONS[e.key];
    if (!action) return;
    e.preventDefault();
    this.gate.press(action);
  };

  dispose(): void {
    this.target.removeEventListener('keydown', this.onKeyDown);
  }
}
