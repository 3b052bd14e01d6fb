// Scripted headless client: drives a complete lockstep session over the
// same wire protocol the browser speaks, collecting every broadcast state.
// Doubles as a CLI: node dist/headless.js ws://host:port layout agent
// [duration_s] [tick_rate] [seed]

import { pathToFileURL } from 'node:url';
import { WebSocket } from 'ws';

import type {
  ActionName,
  ResultMessage,
  SessionConfig,
  StateMessage,
} from './protocol.js';
import { SessionSocket, SocketLike } from './net.js';

export interface SessionReport {
  states: StateMessage[];
  result: ResultMessage;
}

export type ActionPlan = (tick: number) => ActionName | null;

export function totalTicks(config: SessionConfig): number {
  return Math.max(1, Math.round((config.duration_s ?? 60) * (config.tick_rate ?? 6)));
}

export function runSession(
  url: string,
  config: SessionConfig,
  plan: ActionPlan,
): Promise<SessionReport> {
  return new Promise((resolve, reject) => {
    const ws = new WebSocket(url) as unknown as SocketLike;
    const states: StateMessage[] = [];
    const ticks = totalTicks(config);
    let done = false;

    const fail = (err: Error) => {
      done = true;
      ws.close();
      reject(err);
    };

    const session = new SessionSocket(ws, {
      onOpen: () => session.join({ ...config, lockstep: true }),
      onClose: () => {
        if (!done) reject(new Error('socket closed before result'));
      },
      onMessage: (msg) => {
        if (done) return;
        if (msg.type === 'error') {
          fail(new Error(`server error ${msg.code}: ${msg.detail}`));
        } else if (msg.type === 'state') {
          if (msg.tick !== states.length) {
            fail(new Error(`out-of-order tick ${msg.tick}, expected ${states.length}`));
            return;
          }
          states.push(msg);
          if (msg.tick < ticks) {
            const action = plan(msg.tick);
            if (action) session.action(action, msg.tick);
            session.sync();
          }
        } else {
          done = true;
          session.close();
          resolve({ states, result: msg });
        }
      },
    });
  });
}

const PATTERN: (ActionName | null)[] = ['up', 'left', 'interact', null, 'down', 'right', 'interact', null];

export const cyclePlan: ActionPlan = (tick) => PATTERN[tick % PATTERN.length];

async function main(argv: string[]): Promise<number> {
  const [url, layout, agent, duration, tickRate, seed] = argv;
  if (!url || !layout || !agent) {
    console.error('usage: headless <ws-url> <layout> <agent> [duration_s] [tick_rate] [seed]');
    return 2;
  }
  const config: SessionConfig = {
    layout,
    agent,
    duration_s: duration ? Number(duration) : 60,
    tick_rate: tickRate ? Number(tickRate) : 6,
    record: true,
    lockstep: true,
  };
  if (seed) config.seed = Number(seed);
  const report = await runSession(`${url}/session`, config, cyclePlan);
  console.log(
    JSON.stringify({
      ticks: report.states.length - 1,
      final_score: report.result.final_score,
      trajectory_id: report.result.trajectory_id,
      incomplete: report.result.incomplete,
    }),
  );
  return 0;
}

if (process.argv[1] && import.meta.url === pathToFileURL(process.argv[1]).href) {
  main(process.argv.slice(2)).then(
    (code) => process.exit(code),
    (err) => {
      console.error(String(err));
      process.exit(1);
    },
  );
}
