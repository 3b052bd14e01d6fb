// Canvas renderer: a drawn frame is a pure function of the last state
// message. Tiles, players, held items, pot timers, counter items, score and
// the countdown each get a distinct mark.

import type {
  ErrorMessage,
  GameStateDict,
  ItemDict,
  Orientation,
  PotDict,
  ResultMessage,
} from './protocol.js';
import { isSoup } from './protocol.js';
import type { LayoutInfo, TileKind } from './layout.js';

// Structural subset of CanvasRenderingContext2D so tests can substitute a
// recording context without a real canvas backend.
export interface Draw2D {
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  font: string;
  textAlign: CanvasTextAlign;
  textBaseline: CanvasTextBaseline;
  lineWidth: number;
  globalAlpha: number;
  clearRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  fill(): void;
  stroke(): void;
  fillText(text: string, x: number, y: number): void;
}

export interface FrameView {
  layout: LayoutInfo;
  state: GameStateDict | null;
  score: number;
  timeLeft: number;
  result: ResultMessage | null;
  error: ErrorMessage | null;
}

export const TILE = 48;
export const HUD = 28;

export const PLAYER_FILL = ['#2f6fd0', '#e08e2f'];

const TILE_FILL: Record<TileKind, string> = {
  floor: '#ece6d8',
  counter: '#9b9488',
  pot: '#46464c',
  onion_source: '#d9a834',
  tomato_source: '#c4452f',
  dish_source: '#c9cdd3',
  serve_window: '#4d8f52',
};

const TILE_MARK: Partial<Record<TileKind, string>> = {
  onion_source: 'O',
  tomato_source: 'T',
  dish_source: 'D',
  serve_window: 'S',
};

const FACING: Record<Orientation, [number, number]> = {
  N: [0, -1],
  S: [0, 1],
  W: [-1, 0],
  E: [1, 0],
};

export function frameSize(layout: LayoutInfo): { width: number; height: number } {
  return { width: layout.width * TILE, height: layout.height * TILE + HUD };
}

// Fraction cooked, or null when the pot is not cooking. Timer counts down
// from cook_time to 0 (ready).
export function potProgress(pot: PotDict, cookTime: number): number | null {
  if (pot.cook_timer === null) return null;
  return (cookTime - pot.cook_timer) / cookTime;
}

function cellOf(key: string): [number, number] {
  const [x, y] = key.split(',');
  return [Number(x), Number(y)];
}

function drawItem(ctx: Draw2D, item: ItemDict, cx: number, cy: number, r: number): void {
  if (isSoup(item)) {
    ctx.fillStyle = item.ruined ? '#55504a' : '#b8762a';
    ctx.beginPath();
    ctx.arc(cx, cy, r, 0, Math.PI * 2);
    ctx.fill();
    ctx.fillStyle = '#f2ead6';
    ctx.font = `${Math.round(r * 1.4)}px sans-serif`;
    ctx.textAlign = 'center';
    ctx.textBaseline = 'middle';
    ctx.fillText(item.ruined ? 'x' : `${item.onions + item.tomatoes}`, cx, cy);
    return;
  }
  if (item === 'dish') {
    ctx.fillStyle = '#f4f4f2';
    ctx.beginPath();
    ctx.arc(cx, cy, r, 0, Math.PI * 2);
    ctx.fill();
    ctx.strokeStyle = '#6a6a66';
    ctx.lineWidth = 1;
    ctx.beginPath();
    ctx.arc(cx, cy, r * 0.55, 0, Math.PI * 2);
    ctx.stroke();
    return;
  }
  ctx.fillStyle = item === 'tomato' ? '#d4503a' : '#e3b23c';
  ctx.beginPath();
  ctx.arc(cx, cy, r, 0, Math.PI * 2);
  ctx.fill();
}

function drawPot(ctx: Draw2D, pot: PotDict, px: number, py: number, cookTime: number): void {
  const cx = px + TILE / 2;
  const cy = py + TILE / 2;
  ctx.fillStyle = '#2b2b30';
  ctx.beginPath();
  ctx.arc(cx, cy, TILE * 0.3, 0, Math.PI * 2);
  ctx.fill();

  const total = pot.onions + pot.tomatoes;
  for (let i = 0; i < total; i++) {
    ctx.fillStyle = i < pot.onions ? '#e3b23c' : '#d4503a';
    ctx.beginPath();
    ctx.arc(cx - 8 + i * 8, cy, 3.5, 0, Math.PI * 2);
    ctx.fill();
  }

  const progress = potProgress(pot, cookTime);
  if (progress !== null) {
    const barW = TILE * 0.8;
    const barX = px + TILE * 0.1;
    const barY = py + 4;
    ctx.fillStyle = '#1d1d20';
    ctx.fillRect(barX, barY, barW, 5);
    ctx.fillStyle = progress >= 1 ? '#62c462' : '#e0c14a';
    ctx.fillRect(barX, barY, barW * Math.min(progress, 1), 5);
  }
  if (pot.ruined) {
    ctx.fillStyle = '#d4503a';
    ctx.font = '14px sans-serif';
    ctx.textAlign = 'center';
    ctx.textBaseline = 'middle';
    ctx.fillText('x', cx, cy);
  }
}

function drawPlayer(
  ctx: Draw2D,
  seat: number,
  pos: [number, number],
  orient: Orientation,
  held: ItemDict | null,
): void {
  const cx = pos[0] * TILE + TILE / 2;
  const cy = HUD + pos[1] * TILE + TILE / 2;
  ctx.fillStyle = PLAYER_FILL[seat];
  ctx.beginPath();
  ctx.arc(cx, cy, TILE * 0.32, 0, Math.PI * 2);
  ctx.fill();

  const [dx, dy] = FACING[orient];
  ctx.strokeStyle = '#ffffff';
  ctx.lineWidth = 3;
  ctx.beginPath();
  ctx.moveTo(cx, cy);
  ctx.lineTo(cx + dx * TILE * 0.3, cy + dy * TILE * 0.3);
  ctx.stroke();

  if (held !== null) {
    drawItem(ctx, held, cx + dx * TILE * 0.34, cy + dy * TILE * 0.34, TILE * 0.14);
  }
}

export function drawFrame(ctx: Draw2D, view: FrameView): void {
  const { layout } = view;
  const { width, height } = frameSize(layout);
  ctx.globalAlpha = 1;
  ctx.clearRect(0, 0, width, height);

  ctx.fillStyle = '#17171a';
  ctx.fillRect(0, 0, width, HUD);
  ctx.fillStyle = '#f2f2ee';
  ctx.font = '15px sans-serif';
  ctx.textBaseline = 'middle';
  ctx.textAlign = 'left';
  ctx.fillText(`score ${view.score}`, 8, HUD / 2);
  ctx.textAlign = 'right';
  ctx.fillText(`${view.timeLeft.toFixed(1)}s left`, width - 8, HUD / 2);

  for (let y = 0; y < layout.height; y++) {
    for (let x = 0; x < layout.width; x++) {
      const kind = layout.tiles[y][x];
      const px = x * TILE;
      const py = HUD + y * TILE;
      ctx.fillStyle = TILE_FILL[kind];
      ctx.fillRect(px, py, TILE, TILE);
      ctx.strokeStyle = '#3b3b3e';
      ctx.lineWidth = 1;
      ctx.strokeRect(px, py, TILE, TILE);
      const mark = TILE_MARK[kind];
      if (mark) {
        ctx.fillStyle = '#222222';
        ctx.font = '16px sans-serif';
        ctx.textAlign = 'center';
        ctx.textBaseline = 'middle';
        ctx.fillText(mark, px + TILE / 2, py + TILE / 2);
      }
    }
  }

  const state = view.state;
  if (state) {
    for (const [key, item] of Object.entries(state.counters)) {
      const [x, y] = cellOf(key);
      drawItem(ctx, item, x * TILE + TILE / 2, HUD + y * TILE + TILE / 2, TILE * 0.18);
    }
    for (const [key, pot] of Object.entries(state.pots)) {
      const [x, y] = cellOf(key);
      drawPot(ctx, pot, x * TILE, HUD + y * TILE, layout.cookTime);
    }
    state.players.forEach((p, seat) => drawPlayer(ctx, seat, p.pos, p.orient, p.held));
  }

  if (view.result) {
    ctx.globalAlpha = 0.75;
    ctx.fillStyle = '#101014';
    ctx.fillRect(0, HUD, width, height - HUD);
    ctx.globalAlpha = 1;
    ctx.fillStyle = '#f2f2ee';
    ctx.font = '22px sans-serif';
    ctx.textAlign = 'center';
    ctx.textBaseline = 'middle';
    const label = view.result.incomplete ? 'left early, score' : 'final score';
    ctx.fillText(`${label} ${view.result.final_score}`, width / 2, (height + HUD) / 2);
  }

  if (view.error) {
    ctx.fillStyle = '#a62b20';
    ctx.fillRect(0, 0, width, HUD);
    ctx.fillStyle = '#ffffff';
    ctx.font = '14px sans-serif';
    ctx.textAlign = 'left';
    ctx.textBaseline = 'middle';
    ctx.fillText(`${view.error.code}: ${view.error.detail}`, 8, HUD / 2);
  }
}

export function createRenderer(canvas: HTMLCanvasElement) {
  const context = canvas.getContext('2d');

  const resize = (layout: LayoutInfo): void => {
    const size = frameSize(layout);
    canvas.width = size.width;
    canvas.height = size.height;
  };

  const draw = (view: FrameView): void => {
    if (!context) return;
    drawFrame(context, view);
  };

  return { resize, draw };
}
