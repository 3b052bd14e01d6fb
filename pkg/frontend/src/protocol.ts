// Wire schema for the live-session service: JSON text frames over a
// WebSocket at /session, plus plain GET /health and /layouts.

export type ActionName = 'up' | 'down' | 'left' | 'right' | 'stay' | 'interact';

export const ACTIONS: ActionName[] = ['up', 'down', 'left', 'right', 'stay', 'interact'];

export type Orientation = 'N' | 'S' | 'E' | 'W';

export interface SessionConfig {
  layout: string;
  agent: string;
  duration_s?: number;
  tick_rate?: number;
  human_seat?: 0 | 1;
  record?: boolean;
  seed?: number;
  lockstep?: boolean;
}

export interface SoupDict {
  onions: number;
  tomatoes: number;
  ruined: boolean;
}

// held items and counter items: plain ingredient/dish names, or a soup
export type ItemDict = string | SoupDict;

export interface PlayerDict {
  pos: [number, number];
  orient: Orientation;
  held: ItemDict | null;
}

export interface PotDict {
  onions: number;
  tomatoes: number;
  ruined: boolean;
  cook_timer: number | null;
}

export interface GameStateDict {
  layout: string;
  t: number;
  players: PlayerDict[];
  pots: Record<string, PotDict>; // keyed "x,y"
  counters: Record<string, ItemDict>;
  score: number;
}

export interface StateMessage {
  type: 'state';
  tick: number;
  state: GameStateDict;
  score: number;
  time_left: number;
}

export interface ResultMessage {
  type: 'result';
  final_score: number;
  trajectory_id: string | null;
  incomplete: boolean;
}

export interface ErrorMessage {
  type: 'error';
  code: string;
  detail: string;
}

export type ServerMessage = StateMessage | ResultMessage | ErrorMessage;

export interface AgentInfo {
  id: string;
  layout: string;
  version: string;
}

export function isSoup(item: ItemDict): item is SoupDict {
  return typeof item === 'object' && item !== null;
}

// Parse a server frame safely; anything malformed becomes null.
export function parseServerMessage(raw: string): ServerMessage | null {
  let msg: unknown;
  try {
    msg = JSON.parse(raw);
  } catch (e) {
    return null;
  }
  if (typeof msg !== 'object' || msg === null) return null;
  const type = (msg as { type?: unknown }).type;
  if (type === 'state' || type === 'result' || type === 'error') {
    return msg as ServerMessage;
  }
  return null;
}

export function joinMessage(config: SessionConfig): string {
  return JSON.stringify({ type: 'join', config });
}

export function actionMessage(action: ActionName, tick: number): string {
  return JSON.stringify({ type: 'action', action, tick });
}

export function syncMessage(): string {
  return JSON.stringify({ type: 'sync' });
}

export function leaveMessage(): string {
  return JSON.stringify({ type: 'leave' });
}
